"""
Helpers for SignalBlocks.

A SignalBlock is a numpy complex128 array of shape (..., M, k): M rows (one
per sub-channel) of k channel uses, with optional leading batch axes for
Monte Carlo trials. numpy stores each complex entry as an interleaved
(re, im) pair of float64, which as_real_pairs() exposes without copying.
"""

from typing import Tuple, Union

import numpy as np

from dmmimo.exceptions import DimensionMismatch

Shape = Union[int, Tuple[int, ...]]


def complex_gaussian(rng: np.random.Generator, shape: Shape, variance=1.0):
    """Draw i.i.d. CN(0, variance) entries: each real part is N(0, variance/2).

    ``variance`` may be an array broadcastable to ``shape``.
    """
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) * np.sqrt(np.asarray(variance, dtype=np.float64) / 2.0)


def as_real_pairs(block: np.ndarray) -> np.ndarray:
    """View a (..., M, k) complex block as (..., M, 2k) interleaved reals."""
    return np.ascontiguousarray(block, dtype=np.complex128).view(np.float64)


def from_real_pairs(pairs: np.ndarray) -> np.ndarray:
    """Inverse of as_real_pairs: (..., M, 2k) reals to (..., M, k) complex."""
    pairs = np.ascontiguousarray(pairs, dtype=np.float64)
    if pairs.shape[-1] % 2:
        raise DimensionMismatch(
            "real-pair block", "an even last axis", pairs.shape[-1]
        )
    return pairs.view(np.complex128)


def element_power(block: np.ndarray) -> float:
    """Average power per complex element."""
    return float(np.mean(np.abs(block) ** 2))


def check_rows(block: np.ndarray, M: int, what: str = "signal block"):
    """Raise DimensionMismatch unless block has M rows."""
    if block.ndim < 2 or block.shape[-2] != M:
        raise DimensionMismatch(what, f"{M} rows", block.shape)
