"""
Experiment configuration, random streams and output writers.
"""

import csv
import hashlib
import json
import math
import os
import zlib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)

from dmmimo._version import VERSION
from dmmimo.constants import (
    DEFAULT_ALPHA_FIRST,
    DEFAULT_ALPHA_LAST,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_HIDDEN_WIDTHS,
    DEFAULT_K,
    DEFAULT_M,
    DEFAULT_N,
    DEFAULT_SEED,
    DEFAULT_SNR_GRID_DB,
    DEFAULT_SVD_SAMPLES,
    DEFAULT_T,
    DEFAULT_TRAINING_SNR_RANGE_DB,
    DEFAULT_TRIALS,
)
from dmmimo.exceptions import InvalidSchedule, MalformedConfig
from dmmimo.log import LOGGER
from dmmimo.training import TrainConfig


class EXPERIMENT_KIND(str, Enum):
    svd_stats = "svd-stats"
    mse_sweep = "mse-sweep"
    e2e_eval = "e2e-eval"
    train = "train"
    gradient_check = "gradient-check"


class SIGNAL_KIND(str, Enum):
    unit_gaussian = "unit-gaussian"
    codec = "codec"


# Desk-scale training defaults; the "full" preset swaps in the long runs.
DESK_STAGES = {
    "stage1": dict(epochs=30, learning_rate=1e-3, iterations_per_epoch=100),
    "stage2": dict(epochs=40, learning_rate=1e-3, iterations_per_epoch=100),
    "stage3": dict(epochs=5, batch_size=128, learning_rate=1e-3, iterations_per_epoch=20),
}
FULL_STAGES = {
    "stage1": dict(epochs=800, learning_rate=1e-4),
    "stage2": dict(epochs=800, learning_rate=1e-4),
    "stage3": dict(epochs=20, learning_rate=1e-4),
}
PRESETS = {"desk": DESK_STAGES, "full": FULL_STAGES}


class ExperimentConfig(BaseModel):
    kind: EXPERIMENT_KIND = EXPERIMENT_KIND.mse_sweep
    """Which experiment to run"""

    preset: str = "desk"
    """Training defaults: "desk" (minutes) or "full" (800/800/20 epochs)"""

    M: PositiveInt = DEFAULT_M
    """Antennas at each end"""

    k: PositiveInt = DEFAULT_K
    """Channel uses per block"""

    n: PositiveInt = DEFAULT_N
    """Source dimension"""

    snr_db: List[float] = list(DEFAULT_SNR_GRID_DB)
    """SNR grid in dB; inf is a noiseless channel"""

    trials: PositiveInt = DEFAULT_TRIALS
    """Monte Carlo trials per SNR"""

    chunk_size: PositiveInt = DEFAULT_CHUNK_SIZE
    """Trials per vectorized chunk; chunk j owns random stream j"""

    svd_samples: PositiveInt = DEFAULT_SVD_SAMPLES
    """Channel draws for svd-stats"""

    histogram_bins: PositiveInt = 100
    histogram_max: float = Field(5.0, gt=0.0)

    T: PositiveInt = DEFAULT_T
    alpha_first: float = DEFAULT_ALPHA_FIRST
    alpha_last: float = DEFAULT_ALPHA_LAST

    predictor: Optional[str] = None
    """"oracle" or the path of a feed_forward predictor checkpoint. Unset, train
    uses the stage 2 checkpoint in checkpoint_dir and the other experiments
    use the oracle"""

    source_power: float = Field(1.0, gt=0.0)
    """sigma_z^2 assumed by the oracle and the Wiener benchmark"""

    signal: Optional[SIGNAL_KIND] = None
    """Encoded signals for mse-sweep and stage 2: unit complex Gaussian or the
    stage 1 codec. Unset, train uses the codec and mse-sweep the Gaussian"""

    sampler: str = "joint"
    """"joint", or "common" to start all sub-channels at the largest step"""

    source: str = "gaussian"
    """Synthetic source: gaussian, white or mixture"""

    checkpoint_dir: Path = Path("checkpoints")
    training_set_size: PositiveInt = 20_000
    snr_range_db: Tuple[float, float] = DEFAULT_TRAINING_SNR_RANGE_DB
    hidden_widths: List[PositiveInt] = list(DEFAULT_HIDDEN_WIDTHS)
    stage1: TrainConfig = TrainConfig(**DESK_STAGES["stage1"])
    stage2: TrainConfig = TrainConfig(**DESK_STAGES["stage2"])
    stage3: TrainConfig = TrainConfig(**DESK_STAGES["stage3"])

    matched_snr: bool = False
    """e2e-eval: also train a stage 1 codec at each test SNR"""

    check_widths: List[PositiveInt] = [8, 8]
    """gradient-check: hidden widths of the checked network"""

    check_batch: PositiveInt = 4

    seed: int = DEFAULT_SEED
    """Master seed of every random stream"""

    out: Optional[Path] = None
    """Output file (default: <kind>.csv or .json in the working directory)"""

    trace: Optional[Path] = None
    """mse-sweep: dump the sampler trace of the first chunk as CSV"""

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="before")
    @classmethod
    def apply_preset(cls, data: Any):
        """Fill stage settings the config leaves out from the chosen preset."""
        if isinstance(data, dict):
            preset = data.get("preset", "desk")
            if preset not in PRESETS:
                raise MalformedConfig(
                    f'Unknown preset "{preset}", please use one of {", ".join(PRESETS)}.'
                )
            for stage, defaults in PRESETS[preset].items():
                given = data.get(stage) or {}
                if isinstance(given, dict):
                    data[stage] = {**defaults, **given}
        return data

    @field_validator("snr_db")
    @classmethod
    def check_snr_grid(cls, value: List[float]):
        if not value:
            raise MalformedConfig("The SNR grid must not be empty.")
        return value

    @field_validator("sampler")
    @classmethod
    def check_sampler(cls, value: str):
        if value not in ("joint", "common"):
            raise MalformedConfig(f'Unknown sampler "{value}", please use joint or common.')
        return value

    @field_validator("source")
    @classmethod
    def check_source(cls, value: str):
        if value not in ("gaussian", "white", "mixture"):
            raise MalformedConfig(
                f'Unknown source "{value}", please use gaussian, white or mixture.'
            )
        return value

    @model_validator(mode="after")
    def check_schedule(self):
        if not 0.0 < self.alpha_last <= self.alpha_first < 1.0:
            raise InvalidSchedule(
                f"The schedule needs 0 < alpha_last <= alpha_first < 1, got "
                f"alpha_first={self.alpha_first} and alpha_last={self.alpha_last}."
            )
        low, high = self.snr_range_db
        if low > high:
            raise MalformedConfig(f"snr_range_db must be increasing, got {low} and {high}.")
        return self

    @property
    def output_path(self) -> Path:
        if self.out is not None:
            return self.out
        suffix = ".json" if self.kind in (EXPERIMENT_KIND.svd_stats, EXPERIMENT_KIND.gradient_check) else ".csv"
        return Path(self.kind.value + suffix)

    @property
    def signal_kind(self) -> SIGNAL_KIND:
        if self.signal is not None:
            return self.signal
        if self.kind == EXPERIMENT_KIND.train:
            return SIGNAL_KIND.codec
        return SIGNAL_KIND.unit_gaussian

    @property
    def predictor_source(self) -> str:
        if self.predictor is not None:
            return self.predictor
        if self.kind == EXPERIMENT_KIND.train:
            return str(self.checkpoint("predictor"))
        return "oracle"

    def checkpoint(self, name: str) -> Path:
        return self.checkpoint_dir / f"{name}.ckpt"

    def schedule(self):
        from dmmimo.diffusion import build_linear_schedule

        return build_linear_schedule(self.T, self.alpha_first, self.alpha_last)


def config_hash(cfg: ExperimentConfig) -> str:
    """First 12 hex digits of the SHA-256 of the canonical JSON dump."""
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf8")).hexdigest()[:12]


def load_experiment_config(
    path: Optional[Union[str, Path]], kind: str, overrides: Optional[Dict[str, Any]] = None
) -> ExperimentConfig:
    """Merge the ``common`` section, the ``kind`` section and overrides (later wins).

    Overrides whose value is None are ignored, so unset CLI flags keep the
    file's values.

    Raises:
        MalformedConfig: if the file is not a mapping of sections, or a value
            does not validate
    """
    data: Dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf8") as f:
            document = yaml.safe_load(f) or {}
        if not isinstance(document, dict):
            raise MalformedConfig(f"{path} must hold a mapping of sections.")
        for section in ("common", kind):
            values = document.get(section) or {}
            if not isinstance(values, dict):
                raise MalformedConfig(f'Section "{section}" in {path} must be a mapping.')
            data.update(values)
        if "kind" in data:
            raise MalformedConfig('"kind" is chosen by the command, not the config file.')
    data.update({key: value for key, value in (overrides or {}).items() if value is not None})
    data["kind"] = kind
    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        raise MalformedConfig(str(e)) from e


def trial_stream(seed: int, tag: str, index: int) -> np.random.Generator:
    """Independent generator for chunk ``index`` of the experiment ``tag``."""
    key = (zlib.crc32(tag.encode("utf8")), int(index))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def chunks(total: int, size: int) -> Iterator[Tuple[int, int]]:
    """(j, batch) pairs covering ``total`` trials in order."""
    for j, start in enumerate(range(0, total, size)):
        yield j, min(size, total - start)


def db(value):
    """10 log10; 0 maps to -inf."""
    with np.errstate(divide="ignore"):
        result = 10.0 * np.log10(np.asarray(value, dtype=np.float64))
    return float(result) if result.ndim == 0 else result


def format_float(value: float) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    return f"{value:.10g}"


def provenance(cfg: ExperimentConfig) -> Dict[str, Any]:
    return {"config_hash": config_hash(cfg), "seed": cfg.seed, "version": VERSION}


def provenance_line(cfg: ExperimentConfig) -> str:
    return " ".join(f"{key}={value}" for key, value in provenance(cfg).items())


def _prepare(path: Path):
    path = Path(path)
    if path.parent and not path.parent.exists():
        os.makedirs(path.parent, exist_ok=True)
    return path


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence[Any]], cfg: ExperimentConfig):
    """CSV with a ``# config_hash=... seed=... version=...`` comment line first."""
    path = _prepare(path)
    with open(path, "w", encoding="utf8", newline="") as f:
        f.write(f"# {provenance_line(cfg)}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(format_float(value) if not isinstance(value, str) else value for value in row)
    LOGGER.info(f"Wrote {len(rows)} rows to {path}")
    return path


def write_json(path: Path, payload: Dict[str, Any], cfg: ExperimentConfig):
    path = _prepare(path)
    document = {"provenance": provenance(cfg), **payload}
    with open(path, "w", encoding="utf8", newline="\n") as f:
        f.write(json.dumps(document, indent=2, ensure_ascii=False) + "\n")
    LOGGER.info(f"Wrote {path}")
    return path


def read_csv(path: Union[str, Path]) -> Tuple[List[str], List[Dict[str, str]]]:
    """Comment lines and rows of a file written by write_csv()."""
    with open(path, encoding="utf8") as f:
        lines = f.read().splitlines()
    comments = [line for line in lines if line.startswith("#")]
    reader = csv.DictReader(line for line in lines if not line.startswith("#"))
    return comments, list(reader)
