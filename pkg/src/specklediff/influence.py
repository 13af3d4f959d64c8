"""Trainable pointwise nonlinearities as Gaussian RBF mixtures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RbfGrid:
    """Shared radial-basis layout: equispaced centers on [-radius, radius].

    The bandwidth defaults to the center spacing, which keeps neighbouring
    bumps overlapping enough for smooth mixtures.
    """

    count: int
    radius: float
    bandwidth: float | None = None

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("need at least 2 RBF centers")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(-self.radius, self.radius, self.count)

    @property
    def gamma(self) -> float:
        if self.bandwidth is not None:
            return float(self.bandwidth)
        return 2.0 * self.radius / (self.count - 1)


def rbf_design(z: np.ndarray, grid: RbfGrid) -> np.ndarray:
    """Design matrix G[..., j] = exp(-(z - mu_j)^2 / (2 gamma^2))."""
    d = np.asarray(z, dtype=np.float64)[..., None] - grid.centers
    np.multiply(d, d, out=d)
    d *= -0.5 / grid.gamma ** 2
    return np.exp(d, out=d)


def rbf_design_deriv(z: np.ndarray, grid: RbfGrid,
                     design: np.ndarray | None = None) -> np.ndarray:
    """d/dz of the design matrix; reuses a precomputed design if given."""
    z = np.asarray(z, dtype=np.float64)
    if design is None:
        design = rbf_design(z, grid)
    return design * (grid.centers - z[..., None]) / grid.gamma ** 2


@dataclass(frozen=True)
class InfluenceFunction:
    """phi(z) = sum_j w_j exp(-(z - mu_j)^2 / (2 gamma^2))."""

    weights: np.ndarray
    grid: RbfGrid

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.grid.count,):
            raise ValueError(
                f"expected {self.grid.count} weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("influence weights must be finite")
        object.__setattr__(self, "weights", w)

    def __call__(self, z) -> np.ndarray:
        return rbf_design(z, self.grid) @ self.weights

    def deriv(self, z) -> np.ndarray:
        return rbf_design_deriv(np.asarray(z, float), self.grid) @ self.weights


def linear_ramp_weights(grid: RbfGrid, slope: float) -> np.ndarray:
    """Weights making the mixture approximate slope * z on the center range.

    With gamma equal to the spacing, sum_j exp(-(z-mu_j)^2/(2 gamma^2)) is
    close to sqrt(2 pi) * gamma / spacing, hence the normalization.
    """
    spacing = 2.0 * grid.radius / (grid.count - 1)
    scale = np.sqrt(2.0 * np.pi) * grid.gamma / spacing
    return slope * grid.centers / scale
