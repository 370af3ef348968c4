"""
A toy JSCC system: an affine encoder f_phi from n source reals to an M x k
complex block, an affine decoder f_varphi back, and the two codec training
stages around the diffusion predictor:

- stage 1: encoder and decoder trained jointly over the MIMO channel chain
  (precode, transmit, equalize) at random SNRs, no denoising
- stage 3: encoder frozen, decoder retrained on denoised signals

Stage 2 is dmmimo.predictor.train_predictor on encoded signals.

Basic Usage:
    from dmmimo.jscc import ToyCodec, stage1_train
    codec = ToyCodec(n=64, M=2, k=16)
    codec.calibrate(sources[:4096])
    Z = codec.encode(sources)
"""

from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from dmmimo.channel import (
    ChannelRealization,
    equalize,
    identity_channel,
    precode,
    sample_rayleigh_channel,
    snr_to_noise_power,
    transmit,
)
from dmmimo.checkpoint import load_arrays, save_arrays
from dmmimo.constants import DEFAULT_K, DEFAULT_M, DEFAULT_N, DEFAULT_SEED, REFERENCE_BATCH_SIZE
from dmmimo.diffusion import NoiseSchedule
from dmmimo.diffusion.sampler import denoise
from dmmimo.exceptions import DimensionMismatch, InvalidParameter, MalformedCheckpoint
from dmmimo.log import LOGGER, progress_disabled
from dmmimo.signals import as_real_pairs, from_real_pairs
from dmmimo.training import (
    TrainConfig,
    TrainingRecord,
    check_finite,
    loss_decreased,
    make_optimizer,
    reset_linear,
)
from dmmimo.types import BasePredictor

CHANNEL_KINDS = ("rayleigh", "identity")


class ToyCodec(torch.nn.Module):
    """Affine encoder and decoder with a frozen power normalizer.

    The encoder output is read as interleaved (re, im) pairs, row by row,
    and multiplied by ``power_scale`` so that encoded elements have unit
    average power on the reference batch (see calibrate()).
    """

    kind = "toy_codec"

    def __init__(
        self, n: int = DEFAULT_N, M: int = DEFAULT_M, k: int = DEFAULT_K, seed: int = DEFAULT_SEED
    ):
        super().__init__()
        for name, value in (("n", n), ("M", M), ("k", k)):
            if value < 1:
                raise InvalidParameter(name, value, "at least 1")
        self.n, self.M, self.k = int(n), int(M), int(k)
        self.encoder = torch.nn.Linear(self.n, self.block_size, dtype=torch.float64)
        self.decoder = torch.nn.Linear(self.block_size, self.n, dtype=torch.float64)
        self.register_buffer("power_scale", torch.ones((), dtype=torch.float64))
        generator = torch.Generator().manual_seed(int(seed))
        reset_linear(self.encoder, generator)
        reset_linear(self.decoder, generator)

    @property
    def block_size(self) -> int:
        """2Mk reals per encoded block."""
        return 2 * self.M * self.k

    @property
    def cbr(self) -> float:
        return self.k / self.n

    def _check_sources(self, s: np.ndarray):
        if np.ndim(s) < 1 or np.shape(s)[-1] != self.n:
            raise DimensionMismatch("source vector", f"length {self.n}", np.shape(s))

    def _check_block(self, Z: np.ndarray):
        if np.ndim(Z) < 2 or np.shape(Z)[-2:] != (self.M, self.k):
            raise DimensionMismatch("signal block", (self.M, self.k), np.shape(Z))

    def to_block(self, reals: np.ndarray) -> np.ndarray:
        """(..., 2Mk) reals to a (..., M, k) complex block."""
        return from_real_pairs(reals.reshape(reals.shape[:-1] + (self.M, 2 * self.k)))

    def to_reals(self, Z: np.ndarray) -> np.ndarray:
        return as_real_pairs(Z).reshape(Z.shape[:-2] + (self.block_size,))

    def raw_power(self, reference: torch.Tensor) -> torch.Tensor:
        """Mean power per complex element of the unscaled encoder output."""
        raw = self.encoder(reference)
        return 2.0 * torch.mean(raw**2)

    def calibrate(self, reference: np.ndarray):
        """Freeze power_scale so that the reference batch encodes at unit power."""
        self._check_sources(reference)
        with torch.no_grad():
            power = self.raw_power(torch.from_numpy(np.asarray(reference, dtype=np.float64)))
            self.power_scale.copy_(1.0 / torch.sqrt(power))
        return self

    def encode(self, s: np.ndarray) -> np.ndarray:
        """Z = f_phi(s) as an (..., M, k) complex block."""
        self._check_sources(s)
        with torch.no_grad():
            reals = self.encoder(torch.from_numpy(np.asarray(s, dtype=np.float64)))
            reals = reals * self.power_scale
        return self.to_block(reals.numpy())

    def decode(self, Z_hat: np.ndarray) -> np.ndarray:
        """s_hat = f_varphi(Z_hat)."""
        self._check_block(Z_hat)
        with torch.no_grad():
            return self.decoder(torch.from_numpy(self.to_reals(Z_hat))).numpy()

    def encoder_arrays(self):
        """Effective real encoder map y = A s + b including the power scale."""
        scale = float(self.power_scale)
        A = self.encoder.weight.detach().numpy() * scale
        b = self.encoder.bias.detach().numpy() * scale
        return A, b

    def set_decoder(self, weight: np.ndarray, bias: np.ndarray):
        with torch.no_grad():
            self.decoder.weight.copy_(torch.from_numpy(np.asarray(weight, dtype=np.float64)))
            self.decoder.bias.copy_(torch.from_numpy(np.asarray(bias, dtype=np.float64)))

    def state_arrays(self):
        return {
            name: value.detach().numpy().copy()
            for name, value in self.state_dict().items()
        }

    def save(self, path: Union[str, Path], meta: Optional[dict] = None):
        header = {"n": self.n, "M": self.M, "k": self.k, "cbr": self.cbr}
        header.update(meta or {})
        save_arrays(path, self.kind, self.state_arrays(), header)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ToyCodec":
        header, arrays = load_arrays(path, kind=cls.kind)
        meta = header.get("meta", {})
        try:
            codec = cls(meta["n"], meta["M"], meta["k"])
            codec.load_state_dict(
                {name: torch.from_numpy(np.array(value)) for name, value in arrays.items()}
            )
        except (KeyError, RuntimeError) as e:
            raise MalformedCheckpoint(f"{path} does not describe a codec: {e}") from e
        return codec


def sample_snr_db(rng: np.random.Generator, snr_range_db: Tuple[float, float], size: int):
    """Per-sample SNR uniform in the range; a degenerate range is constant."""
    low, high = snr_range_db
    if low > high:
        raise InvalidParameter("snr_range_db", snr_range_db, "an increasing pair")
    if low == high:
        return np.full(size, float(low))
    return rng.uniform(low, high, size)


def sample_channels(M: int, rng: np.random.Generator, size: int, channel: str = "rayleigh"):
    if channel == "rayleigh":
        return sample_rayleigh_channel(M, rng, size=size)
    if channel == "identity":
        return identity_channel(M, size=size)
    raise InvalidParameter("channel", channel, f"one of {', '.join(CHANNEL_KINDS)}")


def channel_chain(
    Z: np.ndarray, ch: ChannelRealization, sigma_sq, rng: np.random.Generator
) -> np.ndarray:
    """Y' after precoding, transmission and equalization."""
    return equalize(transmit(precode(Z, ch), ch, sigma_sq, rng), ch, rng)


def _training_batches(source_set: np.ndarray, cfg: TrainConfig, rng: np.random.Generator):
    for _ in range(cfg.iterations(len(source_set))):
        yield source_set[rng.integers(0, len(source_set), cfg.batch_size)]


def _check_source_set(codec: ToyCodec, source_set: np.ndarray):
    if np.ndim(source_set) != 2 or len(source_set) == 0:
        raise InvalidParameter("source_set", np.shape(source_set), "a non-empty (N, n) array")
    codec._check_sources(source_set)


def stage1_train(
    codec: ToyCodec,
    source_set: np.ndarray,
    snr_range_db: Tuple[float, float],
    cfg: TrainConfig,
    rng: np.random.Generator,
    channel: str = "rayleigh",
    reference: Optional[np.ndarray] = None,
) -> Tuple[ToyCodec, List[TrainingRecord]]:
    """Train encoder and decoder jointly over the channel, without denoising.

    The channel chain maps Z to Z + N' where N' only depends on the channel
    draw and the noise, so each batch computes N' in numpy and adds it to
    the differentiable encoder output. While training, the power normalizer
    is recomputed from the reference batch at every step; calibrate() freezes
    it at the end.

    Args:
        codec (ToyCodec): updated in place
        source_set (ndarray): training sources (N, n)
        snr_range_db (tuple): per-sample SNR is uniform in this range
        cfg (TrainConfig): optimizer settings
        rng (Generator): source of batches, channels and noise
        channel (str): "rayleigh", or "identity" for H = I
        reference (ndarray): power reference batch (default: the first 4096 sources)

    Raises:
        TrainingDiverged: if a batch loss is NaN or infinite
    """
    _check_source_set(codec, source_set)
    if reference is None:
        reference = source_set[:REFERENCE_BATCH_SIZE]
    reference_tensor = torch.from_numpy(np.asarray(reference, dtype=np.float64))
    iterations = cfg.iterations(len(source_set))
    optimizer, scheduler = make_optimizer(codec.parameters(), cfg, cfg.epochs * iterations)
    history = []
    step = 0
    for epoch in tqdm(range(cfg.epochs), desc="stage 1", disable=progress_disabled()):
        losses = []
        learning_rate = scheduler.get_last_lr()[0]
        for s in _training_batches(source_set, cfg, rng):
            s_tensor = torch.from_numpy(s)
            scale = 1.0 / torch.sqrt(codec.raw_power(reference_tensor))
            reals = codec.encoder(s_tensor) * scale
            Z = codec.to_block(reals.detach().numpy())
            sigma_sq = snr_to_noise_power(sample_snr_db(rng, snr_range_db, len(s)), codec.M)
            ch = sample_channels(codec.M, rng, len(s), channel)
            n_eff = channel_chain(Z, ch, sigma_sq, rng) - Z
            received = reals + torch.from_numpy(codec.to_reals(n_eff))
            loss = torch.mean((codec.decoder(received) - s_tensor) ** 2)
            losses.append(check_finite(loss, "stage 1", step + 1))
            optimizer.zero_grad()
            loss.backward()
            learning_rate = scheduler.get_last_lr()[0]
            optimizer.step()
            scheduler.step()
            step += 1
        history.append(TrainingRecord(epoch + 1, float(np.mean(losses)), float(learning_rate)))
        LOGGER.debug(f"stage 1 epoch {epoch + 1}: loss {history[-1].mean_loss:.6f}")
    codec.calibrate(reference)
    if not loss_decreased(history):
        LOGGER.warning("The stage 1 loss did not decrease over training.")
    return codec, history


def stage3_retrain(
    codec: ToyCodec,
    model: BasePredictor,
    source_set: np.ndarray,
    snr_range_db: Tuple[float, float],
    cfg: TrainConfig,
    rng: np.random.Generator,
    sched: NoiseSchedule,
    sampler: str = "joint",
) -> Tuple[ToyCodec, List[TrainingRecord]]:
    """Retrain only the decoder on denoised signals.

    The encoder, its power scale and the predictor are left untouched.
    """
    _check_source_set(codec, source_set)
    iterations = cfg.iterations(len(source_set))
    optimizer, scheduler = make_optimizer(
        codec.decoder.parameters(), cfg, cfg.epochs * iterations
    )
    history = []
    step = 0
    for epoch in tqdm(range(cfg.epochs), desc="stage 3", disable=progress_disabled()):
        losses = []
        learning_rate = scheduler.get_last_lr()[0]
        for s in _training_batches(source_set, cfg, rng):
            Z = codec.encode(s)
            sigma_sq = snr_to_noise_power(sample_snr_db(rng, snr_range_db, len(s)), codec.M)
            ch = sample_rayleigh_channel(codec.M, rng, size=len(s))
            Z_hat, _ = denoise(channel_chain(Z, ch, sigma_sq, rng), ch, sigma_sq, model, sched, rng, sampler)
            s_hat = codec.decoder(torch.from_numpy(codec.to_reals(Z_hat)))
            loss = torch.mean((s_hat - torch.from_numpy(s)) ** 2)
            losses.append(check_finite(loss, "stage 3", step + 1))
            optimizer.zero_grad()
            loss.backward()
            learning_rate = scheduler.get_last_lr()[0]
            optimizer.step()
            scheduler.step()
            step += 1
        history.append(TrainingRecord(epoch + 1, float(np.mean(losses)), float(learning_rate)))
        LOGGER.debug(f"stage 3 epoch {epoch + 1}: loss {history[-1].mean_loss:.6f}")
    if not loss_decreased(history):
        LOGGER.warning("The stage 3 loss did not decrease over training.")
    return codec, history


def reconstruction_errors(
    codec: ToyCodec,
    sources: np.ndarray,
    snr_db: float,
    rng: np.random.Generator,
    model: Optional[BasePredictor] = None,
    sched: Optional[NoiseSchedule] = None,
    sampler: str = "joint",
) -> np.ndarray:
    """Per-sample mean squared source error over the channel, optionally denoised."""
    Z = codec.encode(sources)
    sigma_sq = snr_to_noise_power(snr_db, codec.M)
    ch = sample_rayleigh_channel(codec.M, rng, size=len(sources))
    Y_eq = channel_chain(Z, ch, sigma_sq, rng)
    if model is not None:
        Y_eq, _ = denoise(Y_eq, ch, sigma_sq, model, sched, rng, sampler)
    return np.mean((codec.decode(Y_eq) - sources) ** 2, axis=-1)


def wiener_decoder(
    codec: ToyCodec, source_mean: np.ndarray, source_covariance: np.ndarray, sigma_sq: float
):
    """Linear MMSE decoder for y = A s + b + n with H = I.

    Each real noise component has variance sigma_sq / 2, so
    D = C_s A^T (A C_s A^T + sigma_sq/2 I)^-1 and the offset makes the
    estimate unbiased: c = mu - D (A mu + b).

    Returns:
        (weight, bias) shaped like the decoder's
    """
    A, b = codec.encoder_arrays()
    C_yy = A @ source_covariance @ A.T + 0.5 * sigma_sq * np.eye(codec.block_size)
    weight = np.linalg.solve(C_yy, A @ source_covariance).T
    bias = source_mean - weight @ (A @ source_mean + b)
    return weight, bias


def fit_least_squares_decoder(codec: ToyCodec, sources: np.ndarray, Z_hat: np.ndarray):
    """Set the decoder to the affine least-squares fit of sources from Z_hat."""
    codec._check_sources(sources)
    reals = codec.to_reals(Z_hat)
    design = np.concatenate([reals, np.ones((len(reals), 1))], axis=1)
    solution, *_ = np.linalg.lstsq(design, sources, rcond=None)
    codec.set_decoder(solution[:-1].T, solution[-1])
    return codec
