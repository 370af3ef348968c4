"""
Synthetic real-valued sources standing in for image features.
"""

from typing import Tuple, Union

import numpy as np

from dmmimo.constants import SOURCE_CONDITION_NUMBER
from dmmimo.exceptions import InvalidParameter

SOURCE_KINDS = ("gaussian", "white", "mixture")


class GaussianSource:
    """Zero-mean Gaussian with a fixed covariance (trace n)."""

    kind = "gaussian"

    def __init__(self, covariance: np.ndarray):
        self.covariance = np.asarray(covariance, dtype=np.float64)
        self.n = self.covariance.shape[-1]
        self.mean = np.zeros(self.n)
        self._root = np.linalg.cholesky(self.covariance)

    def sample(self, rng: np.random.Generator, size: Union[int, Tuple[int, ...]]):
        size = (size,) if isinstance(size, int) else tuple(size)
        return rng.standard_normal(size + (self.n,)) @ self._root.T

    @property
    def variance(self) -> float:
        """Average per-element variance."""
        return float(np.trace(self.covariance)) / self.n


def correlated_covariance(
    n: int, rng: np.random.Generator, condition_number: float = SOURCE_CONDITION_NUMBER
) -> np.ndarray:
    """Q diag(e) Q^T with a random orthogonal Q and geometric eigenvalues of mean 1."""
    eigenvalues = np.geomspace(condition_number, 1.0, n)
    eigenvalues *= n / eigenvalues.sum()
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q *= np.sign(np.diag(R))
    covariance = (Q * eigenvalues) @ Q.T
    return (covariance + covariance.T) / 2.0


class GaussianMixtureSource(GaussianSource):
    """Equal-weight mixture of N(+mu, c I) and N(-mu, c I), unit average variance."""

    kind = "mixture"

    def __init__(self, n: int, rng: np.random.Generator, separation: float = 0.8):
        if not 0.0 <= separation < 1.0:
            raise InvalidParameter("separation", separation, "in [0, 1)")
        direction = rng.standard_normal(n)
        self.offset = direction / np.linalg.norm(direction) * np.sqrt(separation * n)
        self.component_variance = 1.0 - separation
        super().__init__(
            self.component_variance * np.eye(n) + np.outer(self.offset, self.offset)
        )

    def sample(self, rng: np.random.Generator, size: Union[int, Tuple[int, ...]]):
        size = (size,) if isinstance(size, int) else tuple(size)
        signs = np.where(rng.random(size) < 0.5, -1.0, 1.0)[..., None]
        noise = rng.standard_normal(size + (self.n,))
        return signs * self.offset + np.sqrt(self.component_variance) * noise


def make_source(kind: str, n: int, rng: np.random.Generator) -> GaussianSource:
    """Build a source; ``rng`` only fixes its structure (covariance, offsets)."""
    if n < 1:
        raise InvalidParameter("n", n, "at least 1")
    if kind == "gaussian":
        source = GaussianSource(correlated_covariance(n, rng))
    elif kind == "white":
        source = GaussianSource(np.eye(n))
        source.kind = "white"
    elif kind == "mixture":
        source = GaussianMixtureSource(n, rng)
    else:
        raise InvalidParameter("source", kind, f"one of {', '.join(SOURCE_KINDS)}")
    return source
