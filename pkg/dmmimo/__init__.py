"""

Basic init file for the dmmimo package

The main entry points for the dmmimo package are:
 - make_schedule() to build the linear diffusion noise schedule
 - make_predictor() to get the analytic oracle or load a trained predictor
 - simulate_link() to run one batch of the full chain: precode, transmit,
   equalize and denoise

Basic Usage:
    import numpy as np
    from dmmimo import make_predictor, make_schedule, simulate_link
    from dmmimo.signals import complex_gaussian
    rng = np.random.default_rng(1234)
    Z = complex_gaussian(rng, (512, 2, 16))
    link = simulate_link(Z, snr_db=10.0, rng=rng)
    mse = np.mean(np.abs(link.Z_hat - Z) ** 2, axis=(0, 2))
"""

import sys
from typing import NamedTuple, Optional

from dmmimo.types import BasePredictor

if sys.version_info < (3, 8):  # pragma: no cover
    sys.exit(
        "Python 3.8 or more recent is required by dmmimo.\n"
        f"You are using Python {sys.version}.\n"
        "Please use a newer version of Python."
    )


def make_schedule(T: Optional[int] = None, alpha_first=None, alpha_last=None):
    """Linear schedule with the package defaults for any argument left out.

    Raises:
        InvalidSchedule: if the parameters do not give 0 < alpha < 1
    """
    from dmmimo.constants import DEFAULT_ALPHA_FIRST, DEFAULT_ALPHA_LAST, DEFAULT_T
    from dmmimo.diffusion import build_linear_schedule

    return build_linear_schedule(
        DEFAULT_T if T is None else T,
        DEFAULT_ALPHA_FIRST if alpha_first is None else alpha_first,
        DEFAULT_ALPHA_LAST if alpha_last is None else alpha_last,
    )


def make_predictor(kind_or_path: str = "oracle", source_power: float = 1.0) -> BasePredictor:
    """Return the analytic Gaussian oracle for "oracle", else load a checkpoint.

    Raises:
        CheckpointMissing: if the checkpoint does not exist
        MalformedCheckpoint: if it is not a predictor checkpoint
    """
    # Defer expensive imports
    from dmmimo.predictor import FeedForwardPredictor, GaussianOraclePredictor

    if kind_or_path == "oracle":
        return GaussianOraclePredictor(source_power)
    return FeedForwardPredictor.load(kind_or_path)


class LinkResult(NamedTuple):
    channel: object
    sigma_sq: float
    Y_eq: object
    Z_hat: object
    trace: object


def simulate_link(
    Z,
    snr_db: float,
    rng,
    model: Optional[BasePredictor] = None,
    sched=None,
    sampler: str = "joint",
    record_trace: bool = False,
) -> LinkResult:
    """Send a batch of encoded blocks Z (..., M, k) over fresh Rayleigh
    channels and denoise the equalized result.

    Args:
        Z (ndarray): encoded signal blocks
        snr_db (float): channel SNR in dB
        rng (Generator): the random stream for channels, noise and sampling
        model (BasePredictor): noise predictor (default: the Gaussian oracle)
        sched (NoiseSchedule): diffusion schedule (default: make_schedule())
        sampler (str): "joint" or "common"
        record_trace (bool): keep the per-step sampler trace

    Returns:
        LinkResult with the channel, noise power, equalized and denoised signals
    """
    from dmmimo.channel import sample_rayleigh_channel, snr_to_noise_power
    from dmmimo.diffusion.sampler import denoise
    from dmmimo.jscc import channel_chain

    M = Z.shape[-2]
    model = make_predictor() if model is None else model
    sched = make_schedule() if sched is None else sched
    sigma_sq = snr_to_noise_power(snr_db, M)
    ch = sample_rayleigh_channel(M, rng, size=Z.shape[:-2])
    Y_eq = channel_chain(Z, ch, sigma_sq, rng)
    Z_hat, trace = denoise(Y_eq, ch, sigma_sq, model, sched, rng, sampler, record_trace)
    return LinkResult(ch, sigma_sq, Y_eq, Z_hat, trace)
