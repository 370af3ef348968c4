"""
Rayleigh block-fading MIMO channels with SVD precoding and equalization.

H = U diag(lambda) V^H is sampled once per block; the transmitter sends
W = V Z, the receiver computes Y' = diag(1/lambda) U^H Y = Z + N', which
splits the M x M channel into M parallel sub-channels with effective noise
power sigma^2 / lambda_i^2. All functions accept leading batch axes.
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from dmmimo.constants import SINGULARITY_THRESHOLD
from dmmimo.diffusion import effective_sampling_step
from dmmimo.exceptions import DimensionMismatch, InvalidParameter, SingularChannel
from dmmimo.log import LOGGER
from dmmimo.signals import check_rows, complex_gaussian


@dataclass(frozen=True)
class ChannelRealization:
    """A sampled channel matrix H together with its SVD factors.

    Singular values are sorted descending along the last axis, with the
    columns of U and V permuted to match, so sub-channel 1 is the strongest.
    """

    H: np.ndarray
    U: np.ndarray
    V: np.ndarray
    lambdas: np.ndarray

    @property
    def M(self) -> int:
        return self.H.shape[-1]

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.H.shape[:-2]

    @property
    def degraded(self) -> np.ndarray:
        """Boolean mask (..., M) of sub-channels below the singularity threshold."""
        return self.lambdas < SINGULARITY_THRESHOLD

    def __getitem__(self, index) -> "ChannelRealization":
        """Select trials along the batch axes."""
        return ChannelRealization(
            self.H[index], self.U[index], self.V[index], self.lambdas[index]
        )


@dataclass(frozen=True)
class SubchannelProfile:
    """Per-sub-channel noise statistics and effective sampling steps."""

    sigma_sq_eff: np.ndarray
    norm_factor: np.ndarray
    m_steps: np.ndarray
    lambdas: np.ndarray
    degraded: np.ndarray

    @property
    def M(self) -> int:
        return self.sigma_sq_eff.shape[-1]

    @property
    def m_max(self) -> int:
        """Largest effective sampling step over every sub-channel and trial."""
        return int(np.max(self.m_steps))


def decompose(H: np.ndarray) -> ChannelRealization:
    """Attach sorted SVD factors to a (..., M, M) channel matrix."""
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise DimensionMismatch("channel matrix", "a square matrix", H.shape)
    U, lambdas, Vh = np.linalg.svd(H)
    order = np.argsort(-lambdas, axis=-1, kind="stable")
    lambdas = np.take_along_axis(lambdas, order, axis=-1)
    U = np.take_along_axis(U, order[..., None, :], axis=-1)
    Vh = np.take_along_axis(Vh, order[..., :, None], axis=-2)
    V = np.conj(np.swapaxes(Vh, -1, -2))
    return ChannelRealization(H=H, U=U, V=V, lambdas=lambdas)


def identity_channel(M: int, size: Union[int, Tuple[int, ...]] = ()) -> ChannelRealization:
    """H = I: every sub-channel has unit gain."""
    size = (size,) if isinstance(size, int) else tuple(size)
    eye = np.broadcast_to(np.eye(M, dtype=np.complex128), size + (M, M)).copy()
    return ChannelRealization(
        H=eye, U=eye.copy(), V=eye.copy(), lambdas=np.ones(size + (M,))
    )


def sample_rayleigh_channel(
    M: int, rng: np.random.Generator, size: Union[int, Tuple[int, ...]] = ()
) -> ChannelRealization:
    """Draw H with i.i.d. CN(0, 1) entries and decompose it.

    Args:
        M (int): antenna count at both ends
        rng (Generator): the random stream to draw from
        size (int or tuple): leading batch shape, () for a single realization
    """
    if M < 1:
        raise InvalidParameter("M", M, "at least 1")
    size = (size,) if isinstance(size, int) else tuple(size)
    return decompose(complex_gaussian(rng, size + (M, M)))


def snr_to_noise_power(snr_db, M: int, P_elem: float = 1.0):
    """Noise power per complex element for a channel SNR in dB.

    With unit power per encoded element, the total transmit power is
    P_s = M * P_elem and sigma^2 = P_s * 10^(-SNR/10). An infinite SNR
    gives a noiseless channel.
    """
    if P_elem <= 0:
        raise InvalidParameter("P_elem", P_elem, "positive")
    snr_db = np.asarray(snr_db, dtype=np.float64)
    sigma_sq = M * P_elem * np.power(10.0, -snr_db / 10.0)
    return float(sigma_sq) if sigma_sq.ndim == 0 else sigma_sq


def precode(Z: np.ndarray, ch: ChannelRealization) -> np.ndarray:
    """W = V Z. V is unitary so the Frobenius norm (and power) is unchanged."""
    check_rows(Z, ch.M, "encoded signal")
    return ch.V @ Z


def transmit(
    W: np.ndarray, ch: ChannelRealization, sigma_sq, rng: np.random.Generator
) -> np.ndarray:
    """Y = H W + N with N i.i.d. CN(0, sigma_sq).

    ``sigma_sq`` is a scalar or one value per trial (the batch shape).
    Noise is drawn even when sigma_sq is zero so the stream advances the
    same way for every SNR.
    """
    check_rows(W, ch.M, "precoded signal")
    sigma_sq = np.asarray(sigma_sq, dtype=np.float64)
    if np.any(sigma_sq < 0):
        raise InvalidParameter("sigma_sq", sigma_sq, "non-negative")
    HW = ch.H @ W
    noise = complex_gaussian(rng, HW.shape)
    return HW + np.sqrt(sigma_sq)[..., None, None] * noise


def equalize(
    Y: np.ndarray, ch: ChannelRealization, rng: np.random.Generator = None
) -> np.ndarray:
    """Y' = diag(1/lambda) U^H Y.

    Sub-channels with lambda_i below the singularity threshold carry no
    usable signal. Without ``rng`` they raise SingularChannel; with ``rng``
    their rows are replaced by standard complex Gaussian samples and
    build_profile() flags them as degraded.
    """
    check_rows(Y, ch.M, "received signal")
    degraded = ch.degraded
    safe_lambdas = np.where(degraded, 1.0, ch.lambdas)
    Y_eq = (np.conj(np.swapaxes(ch.U, -1, -2)) @ Y) / safe_lambdas[..., None]
    if np.any(degraded):
        rows = sorted({int(i) + 1 for i in np.nonzero(degraded)[-1]})
        if rng is None:
            raise SingularChannel(rows)
        LOGGER.warning(
            f"Sub-channel(s) {rows} fell below the singularity threshold; "
            "replacing them with noise."
        )
        mask = np.broadcast_to(degraded[..., None], Y_eq.shape)
        Y_eq = np.where(mask, complex_gaussian(rng, Y_eq.shape), Y_eq)
    return Y_eq


def effective_noise_power(ch: ChannelRealization, sigma_sq) -> np.ndarray:
    """sigma_i^2 = sigma^2 / lambda_i^2 per sub-channel; inf where degraded."""
    sigma_sq = np.asarray(sigma_sq, dtype=np.float64)[..., None]
    lambda_sq = np.where(ch.degraded, 1.0, ch.lambdas**2)
    return np.where(ch.degraded, np.inf, sigma_sq / lambda_sq)


def build_profile(ch: ChannelRealization, sigma_sq, sched) -> SubchannelProfile:
    """Fill effective noise powers, normalization factors and sampling steps.

    Degraded sub-channels get sigma_i^2 clamped to the schedule's largest
    noise-to-signal ratio, which selects m_i = T, and a unit normalization
    factor: equalize() already replaced their rows with CN(0, 1) samples.
    """
    sigma_sq_eff = effective_noise_power(ch, sigma_sq)
    degraded = ch.degraded
    sigma_sq_eff = np.where(degraded, sched.noise_to_signal[-1], sigma_sq_eff)
    m_steps = np.asarray(effective_sampling_step(sigma_sq_eff, sched))
    return SubchannelProfile(
        sigma_sq_eff=sigma_sq_eff,
        norm_factor=np.where(degraded, 1.0, 1.0 / np.sqrt(1.0 + sigma_sq_eff)),
        m_steps=m_steps,
        lambdas=np.broadcast_to(ch.lambdas, sigma_sq_eff.shape).copy(),
        degraded=np.broadcast_to(degraded, sigma_sq_eff.shape).copy(),
    )
