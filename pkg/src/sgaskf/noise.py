"""Measurement-noise families and their samplers.

One tagged record covers both roles a family plays: the generator that
contaminates simulated measurements, and the likelihood model a robust filter
assumes.  All families share an SPD scale matrix; heavy-tailed ones add a
shape parameter (alpha for the sub-Gaussian stable family, dof v for the GSM
benchmarks) and the Gaussian mixture carries its outlier scale and probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import stable

KINDS = ("gaussian", "gaussian_mixture", "sgas", "student_t", "slash", "variance_gamma")


@dataclass(frozen=True, eq=False)
class NoiseFamily:
    kind: str
    scale_matrix: np.ndarray
    shape: float = 1.0  # alpha for sgas, dof v for the GSM benchmarks
    outlier_scale: float = 1.0  # U, gaussian_mixture only
    outlier_prob: float = 0.1  # gaussian_mixture only

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; valid: {KINDS}")
        r = np.asarray(self.scale_matrix, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("scale_matrix must be square")
        if not np.allclose(r, r.T):
            raise ValueError("scale_matrix must be symmetric")
        if self.kind == "sgas" and not 0.0 < self.shape <= 2.0:
            raise ValueError(f"sgas alpha must be in (0, 2], got {self.shape}")
        if self.kind in ("student_t", "slash", "variance_gamma") and self.shape <= 0.0:
            raise ValueError(f"dof must be positive, got {self.shape}")
        if self.kind == "gaussian_mixture":
            if self.outlier_scale < 1.0:
                raise ValueError(f"outlier scale U must be >= 1, got {self.outlier_scale}")
            if not 0.0 < self.outlier_prob < 1.0:
                raise ValueError(f"outlier probability must be in (0, 1), got {self.outlier_prob}")

    @property
    def dim(self) -> int:
        return self.scale_matrix.shape[0]


def _chol(family: NoiseFamily) -> np.ndarray:
    return np.linalg.cholesky(np.asarray(family.scale_matrix, dtype=float))


def sample_measurement_noise(
    family: NoiseFamily, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Noise vector(s): shape (m,) for size None, else (size, m).

    Draw order per family is fixed for reproducibility: the Gaussian core is
    drawn first, then the family's mixing variables.
    """
    n = 1 if size is None else size
    g = rng.standard_normal((n, family.dim)) @ _chol(family).T
    kind = family.kind
    if kind == "gaussian":
        out = g
    elif kind == "gaussian_mixture":
        outlier = rng.uniform(size=n) < family.outlier_prob
        scale = np.where(outlier, np.sqrt(family.outlier_scale), 1.0)
        out = g * scale[:, None]
    elif kind == "student_t":
        precision = rng.gamma(shape=family.shape / 2.0, scale=2.0 / family.shape, size=n)
        out = g / np.sqrt(precision)[:, None]
    elif kind == "slash":
        y = rng.uniform(size=n) ** (2.0 / family.shape)  # Beta(v/2, 1) inverse CDF
        out = g / np.sqrt(y)[:, None]
    elif kind == "variance_gamma":
        # y ~ InvGamma(v/2, v/2) and N(0, R/y); 1/y is the matching gamma draw
        inv_y = rng.gamma(shape=family.shape / 2.0, scale=2.0 / family.shape, size=n)
        out = g * np.sqrt(inv_y)[:, None]
    else:  # sgas: sqrt(Y) G with Y from the positive stable mixing law
        y = stable.sample_positive_stable(stable.mixing_law(family.shape), n, rng)
        out = g * np.sqrt(y)[:, None]
    return out[0] if size is None else out


def true_covariance(family: NoiseFamily) -> np.ndarray | None:
    """Stationary noise covariance, or None where it does not exist."""
    r = np.asarray(family.scale_matrix, dtype=float)
    if family.kind == "gaussian":
        return r
    if family.kind == "gaussian_mixture":
        p = family.outlier_prob
        return (1.0 - p + p * family.outlier_scale) * r
    if family.kind in ("student_t", "slash"):
        v = family.shape
        return v / (v - 2.0) * r if v > 2.0 else None
    if family.kind == "variance_gamma":
        return r  # E[1/y] = 1 for the inverse-gamma mixing law
    # sgas: infinite variance except at the Gaussian endpoint
    return r if family.shape == 2.0 else None
