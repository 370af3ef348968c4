"""
Noise schedule, effective sampling step selection and forward diffusion.

The forward process is x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps with
eps i.i.d. CN(0, 1), so the noise-to-signal ratio after t steps is
f(t) = (1 - abar_t) / abar_t. An equalized sub-channel with effective noise
power sigma_i^2 looks (after normalization) like x at the step m_i whose
f(m_i) is closest to sigma_i^2.
"""

from dataclasses import dataclass

import numpy as np

from dmmimo.constants import DEFAULT_ALPHA_FIRST, DEFAULT_ALPHA_LAST, DEFAULT_T
from dmmimo.exceptions import InvalidParameter, InvalidSchedule
from dmmimo.signals import complex_gaussian


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable table of alpha_t, abar_t and f(t) for t = 1..T.

    Arrays are indexed from 0, i.e. alpha[0] is alpha_1. Use alpha_bar_at()
    for 1-based lookups.
    """

    alpha: np.ndarray
    alpha_bar: np.ndarray
    noise_to_signal: np.ndarray

    @property
    def T(self) -> int:
        return len(self.alpha)

    def alpha_bar_at(self, t):
        """abar_t for a 1-based step (scalar or integer array)."""
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise InvalidParameter("t", t, f"between 1 and T={self.T}")
        abar = self.alpha_bar[t - 1]
        return float(abar) if abar.ndim == 0 else abar


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def build_linear_schedule(
    T: int = DEFAULT_T,
    alpha_first: float = DEFAULT_ALPHA_FIRST,
    alpha_last: float = DEFAULT_ALPHA_LAST,
) -> NoiseSchedule:
    """alpha_t decreases linearly from alpha_first (t=1) to alpha_last (t=T).

    Both endpoints are reproduced exactly; abar is the running product,
    computed once in double precision.

    Raises:
        InvalidSchedule: if T < 1 or not 0 < alpha_last <= alpha_first < 1
    """
    if int(T) != T or T < 1:
        raise InvalidSchedule(f"The number of diffusion steps must be a positive integer, got {T}.")
    if not 0.0 < alpha_last <= alpha_first < 1.0:
        raise InvalidSchedule(
            f"The schedule needs 0 < alpha_last <= alpha_first < 1, got "
            f"alpha_first={alpha_first} and alpha_last={alpha_last}."
        )
    if T == 1:
        alpha = np.array([alpha_first], dtype=np.float64)
    else:
        alpha = np.linspace(alpha_first, alpha_last, int(T), dtype=np.float64)
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(
        alpha=_frozen(alpha),
        alpha_bar=_frozen(alpha_bar),
        noise_to_signal=_frozen((1.0 - alpha_bar) / alpha_bar),
    )


def effective_sampling_step(sigma_sq_eff, sched: NoiseSchedule):
    """The step m in 1..T minimizing |sigma_sq_eff - f(m)|, ties to the smaller m.

    f is strictly increasing, so a binary search finds the two neighbours of
    sigma_sq_eff and the closer one wins. Accepts scalars or arrays.
    """
    sigma_sq_eff = np.asarray(sigma_sq_eff, dtype=np.float64)
    if np.any(sigma_sq_eff < 0):
        raise InvalidParameter("sigma_sq_eff", sigma_sq_eff, "non-negative")
    f = sched.noise_to_signal
    above = np.searchsorted(f, sigma_sq_eff, side="left")
    lo = np.clip(above - 1, 0, sched.T - 1)
    hi = np.clip(above, 0, sched.T - 1)
    take_lo = np.abs(sigma_sq_eff - f[lo]) <= np.abs(f[hi] - sigma_sq_eff)
    m = np.where(take_lo, lo, hi) + 1
    return int(m) if m.ndim == 0 else m


def exhaustive_sampling_step(sigma_sq_eff: float, sched: NoiseSchedule) -> int:
    """Reference scan over all T candidates (np.argmin keeps the first minimum)."""
    return int(np.argmin(np.abs(sigma_sq_eff - sched.noise_to_signal))) + 1


def forward_diffuse(
    x0: np.ndarray,
    t,
    sched: NoiseSchedule,
    rng: np.random.Generator = None,
    noise: np.ndarray = None,
) -> np.ndarray:
    """X_t = sqrt(abar_t) X_0 + sqrt(1 - abar_t) eps.

    ``t`` is a 1-based step, or one step per leading batch entry. Pass
    ``noise`` to reuse a known eps (training needs it as the target);
    otherwise it is drawn from ``rng``.
    """
    alpha_bar = np.asarray(sched.alpha_bar_at(t), dtype=np.float64)[..., None, None]
    if noise is None:
        noise = complex_gaussian(rng, np.shape(x0))
    return np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * noise
