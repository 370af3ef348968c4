"""
Seeded Monte Carlo experiments behind the command line:

- run_svd_stats: singular value statistics of Rayleigh channels
- run_mse_sweep: equalized vs denoised vs Wiener MSE per sub-channel over SNR
- run_e2e: source reconstruction MSE of the codec pipeline over SNR
- run_training: stage 1, 2 or 3 of the training pipeline
- run_gradient_check: autograd against finite differences

Every runner takes an ExperimentConfig, writes its output file and returns
what it wrote. Trials are processed in chunks; chunk j draws from
trial_stream(seed, tag, j), and the same tag is used at every SNR so all
SNR points see the same sources and channels.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from dmmimo import make_predictor
from dmmimo.channel import (
    effective_noise_power,
    sample_rayleigh_channel,
    snr_to_noise_power,
)
from dmmimo.constants import REPORTED_LAMBDA_GAP_DB
from dmmimo.diffusion.sampler import denoise
from dmmimo.exceptions import InvalidStage
from dmmimo.experiments.utils import (
    SIGNAL_KIND,
    ExperimentConfig,
    chunks,
    db,
    trial_stream,
    write_csv,
    write_json,
)
from dmmimo.jscc import ToyCodec, channel_chain, reconstruction_errors, stage1_train, stage3_retrain
from dmmimo.jscc.sources import GaussianSource, make_source
from dmmimo.log import LOGGER, progress_disabled
from dmmimo.predictor import (
    FeedForwardPredictor,
    PredictorQuery,
    gradient_check,
    train_predictor,
)
from dmmimo.signals import complex_gaussian
from dmmimo.training import TrainingRecord
from dmmimo.types import BasePredictor

TRAINING_COLUMNS = ["epoch", "mean_loss", "learning_rate"]


@dataclass
class MetricRow:
    """One SNR point of an MSE sweep; sub-channel lists are ordered by descending lambda."""

    snr_db: float
    mse_eq: List[float]
    mse_dm: List[float]
    mse_mmse: List[float]
    trials: int
    seed: int

    @property
    def mse_eq_avg(self) -> float:
        return float(np.mean(self.mse_eq))

    @property
    def mse_dm_avg(self) -> float:
        return float(np.mean(self.mse_dm))

    @property
    def mse_mmse_avg(self) -> float:
        return float(np.mean(self.mse_mmse))

    @staticmethod
    def columns(M: int) -> List[str]:
        names = ["snr_db"]
        for method in ("eq", "dm", "mmse"):
            names += [f"mse_{method}_{i}" for i in range(1, M + 1)]
            names.append(f"mse_{method}_avg")
        for method in ("eq", "dm", "mmse"):
            names += [f"mse_{method}_{i}_db" for i in range(1, M + 1)]
            names.append(f"mse_{method}_avg_db")
        return names + ["trials", "seed"]

    def values(self) -> list:
        linear = []
        for per_channel, avg in (
            (self.mse_eq, self.mse_eq_avg),
            (self.mse_dm, self.mse_dm_avg),
            (self.mse_mmse, self.mse_mmse_avg),
        ):
            linear += list(per_channel) + [avg]
        return [self.snr_db] + linear + [db(v) for v in linear] + [self.trials, self.seed]


def resolve_predictor(cfg: ExperimentConfig) -> BasePredictor:
    """The analytic oracle, or a trained network loaded from its checkpoint."""
    return make_predictor(cfg.predictor_source, cfg.source_power)


def build_source(cfg: ExperimentConfig) -> GaussianSource:
    """The experiment's source; its structure only depends on the master seed."""
    return make_source(cfg.source, cfg.n, trial_stream(cfg.seed, "source", 0))


def training_set(cfg: ExperimentConfig, source: GaussianSource) -> np.ndarray:
    return source.sample(trial_stream(cfg.seed, "training-set", 0), cfg.training_set_size)


def run_svd_stats(cfg: ExperimentConfig) -> Dict:
    """Moments and density of the sorted singular values of an M x M Rayleigh channel.

    Two gap definitions are reported between sub-channels 1 and 2: the ratio
    of mean powers in dB, and the difference of mean dB powers.
    """
    LOGGER.info(f"Sampling {cfg.svd_samples} {cfg.M}x{cfg.M} channels")
    edges = np.linspace(0.0, cfg.histogram_max, cfg.histogram_bins + 1)
    counts = np.zeros((cfg.M, cfg.histogram_bins), dtype=np.int64)
    overflow = np.zeros(cfg.M, dtype=np.int64)
    power_sum = np.zeros(cfg.M)
    power_db_sum = np.zeros(cfg.M)
    for j, batch in tqdm(
        list(chunks(cfg.svd_samples, max(cfg.chunk_size, 65_536))),
        desc="svd-stats",
        disable=progress_disabled(),
    ):
        lambdas = sample_rayleigh_channel(cfg.M, trial_stream(cfg.seed, "svd-stats", j), size=batch).lambdas
        power_sum += np.sum(lambdas**2, axis=0)
        power_db_sum += np.sum(db(lambdas**2), axis=0)
        overflow += np.sum(lambdas > cfg.histogram_max, axis=0)
        # values past the range land in the last bin
        clipped = np.minimum(lambdas, cfg.histogram_max)
        for i in range(cfg.M):
            counts[i] += np.histogram(clipped[:, i], bins=edges)[0]
    mean_power = power_sum / cfg.svd_samples
    mean_power_db = power_db_sum / cfg.svd_samples
    density = counts / (cfg.svd_samples * np.diff(edges))
    report = {
        "samples": cfg.svd_samples,
        "M": cfg.M,
        "mean_lambda_sq": {"value": mean_power.tolist(), "units": "linear"},
        "mean_lambda_sq_db": {"value": mean_power_db.tolist(), "units": "db"},
        "trace": {"value": float(mean_power.sum()), "units": "linear"},
        "histogram_overflow": {"value": overflow.tolist(), "units": "samples"},
    }
    if cfg.M >= 2:
        report["gap_ratio_of_means"] = {
            "value": db(mean_power[0] / mean_power[1]),
            "units": "db",
        }
        report["gap_mean_of_db"] = {
            "value": float(mean_power_db[0] - mean_power_db[1]),
            "units": "db",
        }
        report["reported_gap"] = {"value": REPORTED_LAMBDA_GAP_DB, "units": "db"}
    write_json(cfg.output_path, report, cfg)
    histogram_path = cfg.output_path.with_name(cfg.output_path.stem + "_histogram.csv")
    columns = ["bin_low", "bin_high"] + [f"density_{i}" for i in range(1, cfg.M + 1)]
    rows = [
        [edges[b], edges[b + 1]] + [density[i, b] for i in range(cfg.M)]
        for b in range(cfg.histogram_bins)
    ]
    write_csv(histogram_path, columns, rows, cfg)
    return report


def _encoded_signals(cfg, rng, batch, codec: Optional[ToyCodec], source):
    if codec is None:
        return complex_gaussian(rng, (batch, cfg.M, cfg.k), cfg.source_power)
    return codec.encode(source.sample(rng, batch))


def run_mse_sweep(cfg: ExperimentConfig) -> List[MetricRow]:
    """Per-sub-channel MSE of the equalized, denoised and Wiener-filtered signal.

    MSE_i is the mean |estimate - Z|^2 over the k elements of row i and all
    trials.

    Raises:
        CheckpointMissing: if the predictor or codec checkpoint is missing
    """
    sched = cfg.schedule()
    model = resolve_predictor(cfg)
    codec = source = None
    if cfg.signal_kind == SIGNAL_KIND.codec:
        codec = ToyCodec.load(cfg.checkpoint("codec_stage1"))
        source = build_source(cfg)
    rows = []
    for snr_db in cfg.snr_db:
        sigma_sq = snr_to_noise_power(snr_db, cfg.M)
        totals = {name: np.zeros(cfg.M) for name in ("eq", "dm", "mmse")}
        for j, batch in tqdm(
            list(chunks(cfg.trials, cfg.chunk_size)),
            desc=f"mse-sweep {snr_db:g} dB",
            disable=progress_disabled(),
        ):
            rng = trial_stream(cfg.seed, "mse-sweep", j)
            Z = _encoded_signals(cfg, rng, batch, codec, source)
            ch = sample_rayleigh_channel(cfg.M, rng, size=batch)
            Y_eq = channel_chain(Z, ch, sigma_sq, rng)
            record = cfg.trace is not None and j == 0 and not rows
            Z_hat, trace = denoise(Y_eq, ch, sigma_sq, model, sched, rng, cfg.sampler, record)
            if record:
                trace.write_csv(cfg.trace)
            sigma_sq_eff = effective_noise_power(ch, sigma_sq)
            wiener_gain = cfg.source_power / (cfg.source_power + sigma_sq_eff)
            Z_wiener = wiener_gain[..., None] * Y_eq
            for name, estimate in (("eq", Y_eq), ("dm", Z_hat), ("mmse", Z_wiener)):
                totals[name] += np.sum(np.abs(estimate - Z) ** 2, axis=(0, 2))
        count = cfg.trials * cfg.k
        row = MetricRow(
            snr_db=float(snr_db),
            mse_eq=(totals["eq"] / count).tolist(),
            mse_dm=(totals["dm"] / count).tolist(),
            mse_mmse=(totals["mmse"] / count).tolist(),
            trials=cfg.trials,
            seed=cfg.seed,
        )
        LOGGER.info(
            f"SNR {snr_db:g} dB: MSE_avg eq {db(row.mse_eq_avg):.3f} dB, "
            f"dm {db(row.mse_dm_avg):.3f} dB"
        )
        rows.append(row)
    write_csv(cfg.output_path, MetricRow.columns(cfg.M), [row.values() for row in rows], cfg)
    return rows


def _heldout_errors(cfg, source, snr_db, codec, model=None, sched=None) -> float:
    """Mean reconstruction MSE over the held-out trials.

    Each column re-creates the same chunk streams, so every method sees
    identical sources, channels and channel noise.
    """
    total = 0.0
    for j, batch in chunks(cfg.trials, cfg.chunk_size):
        sources = source.sample(trial_stream(cfg.seed, "e2e-eval/source", j), batch)
        rng = trial_stream(cfg.seed, "e2e-eval/channel", j)
        errors = reconstruction_errors(codec, sources, snr_db, rng, model, sched, cfg.sampler)
        total += float(np.sum(errors))
    return total / cfg.trials


def run_e2e(cfg: ExperimentConfig) -> List[list]:
    """Reconstruction MSE vs SNR for (a) the stage 1 codec, (b) stage 1 plus
    denoising and (c) the stage 3 decoder plus denoising; optionally (d) a
    stage 1 codec trained at the test SNR.

    Raises:
        CheckpointMissing: if a codec or predictor checkpoint is missing
    """
    sched = cfg.schedule()
    model = resolve_predictor(cfg)
    stage1 = ToyCodec.load(cfg.checkpoint("codec_stage1"))
    stage3 = ToyCodec.load(cfg.checkpoint("codec_stage3"))
    source = build_source(cfg)
    columns = ["snr_db", "mse_stage1", "mse_stage1_dm", "mse_stage3_dm"]
    if cfg.matched_snr:
        columns.append("mse_matched")
    columns += [name + "_db" for name in columns[1:]] + ["trials", "seed"]
    rows = []
    for snr_db in tqdm(cfg.snr_db, desc="e2e-eval", disable=progress_disabled()):
        values = [
            _heldout_errors(cfg, source, snr_db, stage1),
            _heldout_errors(cfg, source, snr_db, stage1, model, sched),
            _heldout_errors(cfg, source, snr_db, stage3, model, sched),
        ]
        if cfg.matched_snr:
            matched = ToyCodec(cfg.n, cfg.M, cfg.k, seed=cfg.stage1.seed)
            stage1_train(
                matched,
                training_set(cfg, source),
                (snr_db, snr_db),
                cfg.stage1,
                trial_stream(cfg.seed, f"matched/{snr_db:g}", 0),
            )
            values.append(_heldout_errors(cfg, source, snr_db, matched))
        LOGGER.info(f"SNR {snr_db:g} dB: " + ", ".join(f"{v:.6f}" for v in values))
        rows.append([float(snr_db)] + values + [db(v) for v in values] + [cfg.trials, cfg.seed])
    write_csv(cfg.output_path, columns, rows, cfg)
    return rows


def _stage2_signals(cfg: ExperimentConfig, source: GaussianSource) -> np.ndarray:
    if cfg.signal_kind == SIGNAL_KIND.unit_gaussian:
        rng = trial_stream(cfg.seed, "training-set", 0)
        return complex_gaussian(rng, (cfg.training_set_size, cfg.M, cfg.k), cfg.source_power)
    codec = ToyCodec.load(cfg.checkpoint("codec_stage1"))
    return codec.encode(training_set(cfg, source))


def run_training(cfg: ExperimentConfig, stage) -> Tuple[Path, List[TrainingRecord]]:
    """Run one training stage, save its checkpoint and write the loss history.

    Stage 1 writes codec_stage1.ckpt, stage 2 predictor.ckpt and stage 3
    codec_stage3.ckpt under the checkpoint directory. Unless the config says
    otherwise, stage 2 trains on the stage 1 encoder output and stage 3
    retrains behind the stage 2 predictor. Each checkpoint records what it
    was trained on in its meta.

    Raises:
        InvalidStage: unless stage is 1, 2 or 3
    """
    try:
        stage = int(stage)
    except (TypeError, ValueError):
        raise InvalidStage(stage)
    if stage not in (1, 2, 3):
        raise InvalidStage(stage)
    source = build_source(cfg)
    rng = trial_stream(cfg.seed, f"stage{stage}", 0)
    meta = {"seed": cfg.seed, "stage": stage}
    if stage == 1:
        codec = ToyCodec(cfg.n, cfg.M, cfg.k, seed=cfg.stage1.seed)
        codec, history = stage1_train(codec, training_set(cfg, source), cfg.snr_range_db, cfg.stage1, rng)
        checkpoint = cfg.checkpoint("codec_stage1")
        cfg.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        codec.save(checkpoint, meta)
    elif stage == 2:
        signals = _stage2_signals(cfg, source)
        meta["signal"] = cfg.signal_kind.value
        model = FeedForwardPredictor(cfg.M, cfg.k, cfg.T, cfg.hidden_widths, seed=cfg.stage2.seed)
        model, history = train_predictor(model, signals, cfg.schedule(), cfg.stage2, rng)
        checkpoint = cfg.checkpoint("predictor")
        cfg.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        model.save(checkpoint, meta)
    else:
        codec = ToyCodec.load(cfg.checkpoint("codec_stage1"))
        model = resolve_predictor(cfg)
        meta["predictor"] = model.kind
        codec, history = stage3_retrain(
            codec,
            model,
            training_set(cfg, source),
            cfg.snr_range_db,
            cfg.stage3,
            rng,
            cfg.schedule(),
            cfg.sampler,
        )
        checkpoint = cfg.checkpoint("codec_stage3")
        codec.save(checkpoint, meta)
    out = cfg.out if cfg.out is not None else Path(f"train-stage{stage}.csv")
    write_csv(out, TRAINING_COLUMNS, [list(record) for record in history], cfg)
    return checkpoint, history


def run_gradient_check(cfg: ExperimentConfig) -> Dict:
    """Compare autograd with central differences on a small random network."""
    sched = cfg.schedule()
    rng = trial_stream(cfg.seed, "gradient-check", 0)
    model = FeedForwardPredictor(cfg.M, cfg.k, cfg.T, cfg.check_widths, seed=cfg.seed)
    batch = cfg.check_batch
    t = rng.integers(1, cfg.T + 1, batch)
    query = PredictorQuery.at_step(
        complex_gaussian(rng, (batch, cfg.M, cfg.k)),
        sample_rayleigh_channel(cfg.M, rng, size=batch).lambdas,
        t,
        sched,
    )
    target = complex_gaussian(rng, (batch, cfg.M, cfg.k))
    error = gradient_check(model, query, target)
    parameters = sum(p.numel() for p in model.net.parameters())
    if error > 1e-4:
        LOGGER.warning(f"Gradient check failed: max relative error {error:.3e}")
    report = {
        "max_relative_error": error,
        "parameters": int(parameters),
        "hidden_widths": list(cfg.check_widths),
        "passed": bool(error <= 1e-4),
    }
    write_json(cfg.output_path, report, cfg)
    return report
