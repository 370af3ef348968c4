"""
Joint sampling: turn equalized sub-channel observations into a denoised
estimate of the encoded signal.

Each sub-channel enters the reverse process at its own effective step m_i.
Starting from t = m_max, rows that are not yet due (m_i <= t - 1) are
re-noised from their normalized observation, the others take a
deterministic reverse step driven by one predictor call on the full state.
All functions work on batches of trials.
"""

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from dmmimo.channel import ChannelRealization, SubchannelProfile, build_profile
from dmmimo.diffusion import NoiseSchedule, effective_sampling_step
from dmmimo.exceptions import InvalidParameter
from dmmimo.log import LOGGER
from dmmimo.predictor import GaussianOraclePredictor, PredictorQuery, predict_epsilon
from dmmimo.signals import check_rows, complex_gaussian
from dmmimo.types import BasePredictor

SAMPLERS = ("joint", "common")


class Branch(str, enum.Enum):
    NOISE_ADD = "noise_add"
    REVERSE = "reverse"


@dataclass(frozen=True)
class SamplerState:
    t: int
    x: np.ndarray
    profile: SubchannelProfile
    y_bar: np.ndarray


@dataclass(frozen=True)
class StepRecord:
    """Branch taken by every row when producing the state at step t.

    ``reverse`` and ``row_norms`` have the profile's shape (..., M).
    """

    t: int
    reverse: np.ndarray
    row_norms: np.ndarray

    def branches(self) -> np.ndarray:
        return np.where(self.reverse, Branch.REVERSE.value, Branch.NOISE_ADD.value)


@dataclass
class SamplerTrace:
    m_max: int = 0
    predictor_calls: int = 0
    profile: Optional[SubchannelProfile] = None
    records: List[StepRecord] = field(default_factory=list)
    keep_records: bool = True

    def write_csv(self, path: Union[str, Path]):
        """One line per (trial, step, sub-channel), sub-channels 1-based."""
        with open(path, "w", encoding="utf8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["trial", "t", "subchannel", "branch", "row_norm"])
            for record in self.records:
                branches = record.branches().reshape(-1, record.reverse.shape[-1])
                norms = record.row_norms.reshape(branches.shape)
                for trial, (row_branches, row_norms) in enumerate(zip(branches, norms)):
                    for i, (branch, norm) in enumerate(zip(row_branches, row_norms)):
                        writer.writerow([trial, record.t, i + 1, branch, f"{norm:.10g}"])


def _record(trace: Optional[SamplerTrace], t: int, reverse: np.ndarray, x: np.ndarray):
    if trace is not None and trace.keep_records:
        trace.records.append(
            StepRecord(t=t, reverse=reverse.copy(), row_norms=np.linalg.norm(x, axis=-1))
        )


def normalize_equalized(Y_eq: np.ndarray, profile: SubchannelProfile) -> np.ndarray:
    """Scale row i by 1/sqrt(1 + sigma_i^2)."""
    check_rows(Y_eq, profile.M, "equalized signal")
    return Y_eq * profile.norm_factor[..., None]


def common_step_profile(profile: SubchannelProfile) -> SubchannelProfile:
    """Profile in which every sub-channel of a trial starts at that trial's largest m_i."""
    m_common = np.max(profile.m_steps, axis=-1, keepdims=True)
    return replace(profile, m_steps=np.broadcast_to(m_common, profile.m_steps.shape).copy())


def _renoise(y_bar, m_steps, alpha_bar_t, sched, rng):
    """sqrt(abar_t / abar_m) y_bar + sqrt(1 - abar_t / abar_m) eps with fresh eps."""
    ratio = np.minimum(alpha_bar_t / sched.alpha_bar[m_steps - 1], 1.0)[..., None]
    eps = complex_gaussian(rng, y_bar.shape)
    return np.sqrt(ratio) * y_bar + np.sqrt(1.0 - ratio) * eps


def init_state(
    y_bar: np.ndarray,
    profile: SubchannelProfile,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    trace: Optional[SamplerTrace] = None,
) -> SamplerState:
    """Re-noise every row to t = m_max; rows with m_i = m_max keep y_bar exactly."""
    check_rows(y_bar, profile.M, "normalized signal")
    t = profile.m_max
    x = _renoise(y_bar, profile.m_steps, sched.alpha_bar_at(t), sched, rng)
    _record(trace, t, np.zeros(profile.m_steps.shape, dtype=bool), x)
    return SamplerState(t=t, x=x, profile=profile, y_bar=y_bar)


def _query(state: SamplerState, sched: NoiseSchedule) -> PredictorQuery:
    return PredictorQuery.at_step(state.x, state.profile.lambdas, state.t, sched)


def sampling_step(
    state: SamplerState,
    model: BasePredictor,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    trace: Optional[SamplerTrace] = None,
) -> SamplerState:
    """Move from step t to t - 1.

    Rows with m_i <= t - 1 are re-noised from y_bar. The other rows take
    x_{t-1} = sqrt(abar_{t-1}) (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
    + sqrt(1 - abar_{t-1}) eps_hat, with eps_hat predicted from the whole
    state. The predictor is not called when no row is reversed.
    """
    t = state.t
    if t < 2:
        raise InvalidParameter("state.t", t, "at least 2 for a sampling step")
    alpha_bar_t = sched.alpha_bar_at(t)
    alpha_bar_prev = sched.alpha_bar_at(t - 1)
    reverse = state.profile.m_steps > t - 1
    x_noise = _renoise(state.y_bar, state.profile.m_steps, alpha_bar_prev, sched, rng)
    if np.any(reverse):
        eps_hat = predict_epsilon(model, _query(state, sched))
        if trace is not None:
            trace.predictor_calls += 1
        x_reverse = (
            np.sqrt(alpha_bar_prev)
            * (state.x - np.sqrt(1.0 - alpha_bar_t) * eps_hat)
            / np.sqrt(alpha_bar_t)
            + np.sqrt(1.0 - alpha_bar_prev) * eps_hat
        )
        x = np.where(reverse[..., None], x_reverse, x_noise)
    else:
        x = x_noise
    _record(trace, t, reverse, x)
    return replace(state, t=t - 1, x=x)


def final_step(
    state: SamplerState,
    model: BasePredictor,
    sched: NoiseSchedule,
    trace: Optional[SamplerTrace] = None,
) -> np.ndarray:
    """Z_hat = (X_1 - sqrt(1 - abar_1) eps_hat) / sqrt(abar_1)."""
    if state.t != 1:
        raise InvalidParameter("state.t", state.t, "1 for the final step")
    alpha_bar_1 = sched.alpha_bar_at(1)
    eps_hat = predict_epsilon(model, _query(state, sched))
    if trace is not None:
        trace.predictor_calls += 1
    return (state.x - np.sqrt(1.0 - alpha_bar_1) * eps_hat) / np.sqrt(alpha_bar_1)


def denoise(
    Y_eq: np.ndarray,
    ch: ChannelRealization,
    sigma_sq,
    model: BasePredictor,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    sampler: str = "joint",
    record_trace: bool = False,
):
    """Z_hat = g_theta(Y'): profile, normalize, initialize, m_max - 1 steps, final step.

    Args:
        Y_eq (ndarray): equalized signal (..., M, k)
        ch (ChannelRealization): the channel that produced it
        sigma_sq: channel noise power, scalar or one value per trial
        model (BasePredictor): noise predictor
        sched (NoiseSchedule): the diffusion schedule
        rng (Generator): stream for the re-noising draws
        sampler (str): "joint", or "common" to start every sub-channel of a
            trial at its largest step
        record_trace (bool): keep a StepRecord per step

    Returns:
        (Z_hat, SamplerTrace)
    """
    if sampler not in SAMPLERS:
        raise InvalidParameter("sampler", sampler, f"one of {', '.join(SAMPLERS)}")
    profile = build_profile(ch, sigma_sq, sched)
    if sampler == "common":
        profile = common_step_profile(profile)
    y_bar = normalize_equalized(Y_eq, profile)
    # the call count is always tracked, step records only on request
    trace = SamplerTrace(m_max=profile.m_max, profile=profile, keep_records=record_trace)
    state = init_state(y_bar, profile, sched, rng, trace)
    while state.t > 1:
        state = sampling_step(state, model, sched, rng, trace)
    Z_hat = final_step(state, model, sched, trace)
    LOGGER.debug(
        f"denoised from m_max={trace.m_max} with {trace.predictor_calls} predictor calls"
    )
    return Z_hat, trace


def scalar_recursion_gain(m_steps, sched: NoiseSchedule, source_power: float = 1.0):
    """Overall gain the oracle sampler applies to a row entering at step m.

    With the Gaussian oracle every step is a per-row scalar map, so a row
    that enters at m_i leaves as gain(m_i) * y_bar_i. For unit power the
    gain is sqrt(abar_1) prod_{t=2}^{m} [sqrt(abar_{t-1} abar_t)
    + sqrt((1 - abar_{t-1})(1 - abar_t))].
    """
    alpha_bar = sched.alpha_bar
    c = GaussianOraclePredictor(source_power).coefficient(alpha_bar)
    final = (1.0 - np.sqrt(1.0 - alpha_bar[0]) * c[0]) / np.sqrt(alpha_bar[0])
    steps = (
        np.sqrt(alpha_bar[:-1])
        * (1.0 - np.sqrt(1.0 - alpha_bar[1:]) * c[1:])
        / np.sqrt(alpha_bar[1:])
        + np.sqrt(1.0 - alpha_bar[:-1]) * c[1:]
    )
    chain = final * np.concatenate([[1.0], np.cumprod(steps)])
    m_steps = np.asarray(m_steps)
    if np.any(m_steps < 1) or np.any(m_steps > sched.T):
        raise InvalidParameter("m_steps", m_steps, f"between 1 and T={sched.T}")
    gain = chain[m_steps - 1]
    return float(gain) if gain.ndim == 0 else gain


def oracle_denoised_mse(
    sigma_sq_eff,
    sched: NoiseSchedule,
    source_power: float = 1.0,
    m_steps=None,
):
    """Expected per-element MSE of the oracle sampler on a sub-channel.

    Z_hat_i = g Y'_i with g = gain(m_i) / sqrt(1 + sigma_i^2), so
    MSE_i = (g - 1)^2 sigma_z^2 + g^2 sigma_i^2. ``m_steps`` overrides the
    entry steps, e.g. with common_step_profile().
    """
    sigma_sq_eff = np.asarray(sigma_sq_eff, dtype=np.float64)
    if m_steps is None:
        m_steps = effective_sampling_step(sigma_sq_eff, sched)
    g = scalar_recursion_gain(m_steps, sched, source_power) / np.sqrt(1.0 + sigma_sq_eff)
    mse = (g - 1.0) ** 2 * source_power + g**2 * sigma_sq_eff
    return float(mse) if np.ndim(mse) == 0 else mse


def wiener_mse(sigma_sq_eff, source_power: float = 1.0):
    """Linear MMSE sigma_z^2 sigma_i^2 / (sigma_z^2 + sigma_i^2)."""
    sigma_sq_eff = np.asarray(sigma_sq_eff, dtype=np.float64)
    mse = source_power * sigma_sq_eff / (source_power + sigma_sq_eff)
    return float(mse) if mse.ndim == 0 else mse
