"""Linear feature disentangling: PCA fit, transform, inverse, diagnostics.

The fitted map rotates (optionally standardized) features into linearly
uncorrelated component scores ordered by explained variance. Other
disentanglers (ICA, autoencoders) can plug in by matching the
transform/inverse_transform surface of PcaDisentangler.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


class PcaError(ValueError):
    """Invalid PCA fit request (rank, shapes)."""


def covariance_matrix(data) -> np.ndarray:
    """Sample covariance (1/(n-1) normalization), symmetrized."""
    x = np.atleast_2d(np.asarray(data, dtype=float))
    n = x.shape[0]
    if n < 2:
        raise PcaError(f"need >= 2 samples, got {n}")
    xc = x - x.mean(axis=0)
    c = (xc.T @ xc) / (n - 1)
    return (c + c.T) / 2.0


@dataclass(frozen=True)
class PcaMap:
    """Affine orthogonal map: transform(x) = (x - mean) @ components.T.

    Component rows are orthonormal eigenvectors of the sample covariance,
    ordered by nonincreasing eigenvalue, sign-fixed so the largest-magnitude
    entry of each row is positive.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def __post_init__(self):
        for name in ("mean", "components", "explained_variance"):
            a = np.ascontiguousarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def d(self) -> int:
        return self.components.shape[1]

    @property
    def c(self) -> int:
        return self.components.shape[0]

    def to_json(self) -> str:
        return json.dumps(
            {
                "mean": self.mean.tolist(),
                "components": self.components.tolist(),
                "explained_variance": self.explained_variance.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, blob: str) -> "PcaMap":
        d = json.loads(blob)
        return cls(
            mean=np.array(d["mean"]),
            components=np.array(d["components"]),
            explained_variance=np.array(d["explained_variance"]),
        )


def fit_pca(data, c: int) -> PcaMap:
    """Top-c principal components of the centered sample covariance.

    Raises PcaError when c exceeds the numerical rank of the data.
    """
    x = np.atleast_2d(np.asarray(data, dtype=float))
    n, d = x.shape
    if n < 2:
        raise PcaError(f"need >= 2 samples, got {n}")
    if not 1 <= c <= d:
        raise PcaError(f"c must lie in [1, {d}], got {c}")
    if not np.all(np.isfinite(x)):
        raise PcaError("data contains NaN/Inf")
    cov = covariance_matrix(x)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = eigvals[::-1]
    eigvecs = eigvecs[:, ::-1]
    eigvals = np.clip(eigvals, 0.0, None)
    scale = eigvals[0] if eigvals[0] > 0 else 1.0
    rank = int(np.sum(eigvals > 1e-12 * scale))
    if c > rank:
        raise PcaError(f"requested {c} components but data has numerical rank {rank}")
    components = eigvecs[:, :c].T.copy()
    # deterministic sign: largest-magnitude entry of each component positive
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaMap(mean=x.mean(axis=0), components=components, explained_variance=eigvals[:c])


def pca_transform(m: PcaMap, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != m.d:
        raise PcaError(f"expected {m.d} features, got {x.shape[1]}")
    return (x - m.mean) @ m.components.T


def pca_inverse(m: PcaMap, z) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != m.c:
        raise PcaError(f"expected {m.c} components, got {z.shape[1]}")
    return z @ m.components + m.mean


def reconstruction_error(m: PcaMap, data) -> float:
    """Squared reconstruction error with the covariance normalization
    (1/(n-1)); on the fitted data this equals the discarded-eigenvalue sum."""
    x = np.atleast_2d(np.asarray(data, dtype=float))
    recon = pca_inverse(m, pca_transform(m, x))
    return float(np.sum((x - recon) ** 2) / (x.shape[0] - 1))


def default_components(n_features: int) -> int:
    """Half the feature count, rounded up."""
    return max(1, math.ceil(n_features / 2))


@dataclass(frozen=True)
class PcaDisentangler:
    """Standardize-then-rotate feature map with exact inverse.

    Each feature is divided by its fitted standard deviation (skipped for
    constant features and when standardize=False at fit time) before the
    PCA rotation, so the rotation diagonalizes the correlation structure.
    """

    scale: np.ndarray
    pca: PcaMap

    def __post_init__(self):
        s = np.ascontiguousarray(self.scale, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "scale", s)

    @property
    def n_features(self) -> int:
        return self.pca.d

    @property
    def n_components(self) -> int:
        return self.pca.c

    def transform(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return pca_transform(self.pca, x / self.scale)

    def inverse_transform(self, z) -> np.ndarray:
        return pca_inverse(self.pca, z) * self.scale


def fit_disentangler(data, c: int | None = None, standardize: bool = True) -> PcaDisentangler:
    x = np.atleast_2d(np.asarray(data, dtype=float))
    if c is None:
        c = default_components(x.shape[1])
    if standardize:
        scale = x.std(axis=0, ddof=0)
        scale = np.where(scale == 0.0, 1.0, scale)
    else:
        scale = np.ones(x.shape[1])
    return PcaDisentangler(scale=scale, pca=fit_pca(x / scale, c))
