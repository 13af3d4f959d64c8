"""Multiplicative speckle statistics.

Noise synthesis for L-look amplitude images, the three fidelity energies of
the multiplicative model, and the closed-form proximal operator of the
I-divergence data term that drives the reaction step of the diffusion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imageops import as_image

# name of the counter-based generator recorded in model/run metadata
GENERATOR_NAME = "philox"

# pixels with f below this floor are clamped before the prox; the closed
# form degenerates at f = 0 and later stages need strict positivity
F_FLOOR = 1e-6


@dataclass(frozen=True)
class SpeckleConfig:
    """Number of looks and the 64-bit seed of the noise generator."""

    looks: int
    seed: int

    def __post_init__(self):
        if self.looks < 1:
            raise ValueError(f"looks must be >= 1, got {self.looks}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class NoisyPair:
    """A ground-truth image together with its speckled observation."""

    clean: np.ndarray
    noisy: np.ndarray
    config: SpeckleConfig

    def __post_init__(self):
        if self.clean.shape != self.noisy.shape:
            raise ValueError("clean and noisy images must share dimensions")


def speckle_field(shape, cfg: SpeckleConfig) -> np.ndarray:
    """Amplitude speckle n with E[n^2] = 1.

    n^2 is the mean of `looks` independent unit-mean exponential variates,
    i.e. Gamma(L, 1/L); n itself is Nakagami(L, 1) distributed. Philox keyed
    by the seed makes the field bit-reproducible across machines.
    """
    rng = np.random.Generator(np.random.Philox(key=int(cfg.seed)))
    intensity = rng.gamma(shape=float(cfg.looks), scale=1.0 / cfg.looks,
                          size=shape)
    return np.sqrt(intensity)


def sample_speckle(u, cfg: SpeckleConfig) -> NoisyPair:
    """Multiply a nonnegative clean image by an L-look speckle field."""
    u = as_image(u, "clean image")
    if np.any(u < 0):
        raise ValueError("clean image must be nonnegative")
    n = speckle_field(u.shape, cfg)
    return NoisyPair(clean=u, noisy=u * n, config=cfg)


def nakagami_mean(looks: int) -> float:
    """E[n] of the unit-power amplitude speckle: Gamma(L+1/2)/(Gamma(L) sqrt(L))."""
    return math.gamma(looks + 0.5) / (math.gamma(looks) * math.sqrt(looks))


def energy_d1(u, f, looks: int) -> float:
    """Negative log-likelihood data term <L (2 log u + f^2/u^2), 1> (nonconvex)."""
    u = as_image(u, "u")
    f = as_image(f, "f")
    if np.any(u <= 0):
        raise ValueError("u must be strictly positive")
    return float(np.sum(looks * (2.0 * np.log(u) + f ** 2 / u ** 2)))


def energy_d2(w, f, looks: int) -> float:
    """Log-domain data term <L (2 w + f^2 exp(-2w)), 1> with w = log u."""
    w = as_image(w, "w")
    f = as_image(f, "f")
    return float(np.sum(looks * (2.0 * w + f ** 2 * np.exp(-2.0 * w))))


def energy_d3(u, f, lam: float) -> float:
    """I-divergence data term <lambda (u^2 - 2 f^2 log u), 1> (strictly convex)."""
    u = as_image(u, "u")
    f = as_image(f, "f")
    if np.any(u <= 0):
        raise ValueError("u must be strictly positive")
    return float(np.sum(lam * (u ** 2 - 2.0 * f ** 2 * np.log(u))))


def _checked(u_tilde, f, lam):
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    u_tilde = as_image(u_tilde, "u_tilde")
    f = np.maximum(as_image(f, "f"), F_FLOOR)
    return u_tilde, f


def prox_idiv(u_tilde, f, lam: float) -> np.ndarray:
    """Closed-form minimizer of ||u - u_tilde||^2/2 + lambda <u^2 - 2 f^2 log u, 1>.

    Pointwise (u_tilde + sqrt(u_tilde^2 + 8 (1+2 lambda) lambda f^2)) /
    (2 (1+2 lambda)); strictly positive wherever f > 0, even for negative
    u_tilde.
    """
    u_tilde, f = _checked(u_tilde, f, lam)
    a = 1.0 + 2.0 * lam
    root = np.sqrt(u_tilde ** 2 + 8.0 * a * lam * f ** 2)
    return (u_tilde + root) / (2.0 * a)


def prox_idiv_dutilde(u_tilde, f, lam: float) -> np.ndarray:
    """Diagonal of d(prox)/d(u_tilde); every entry lies in (0, 1/(1+2 lambda))."""
    u_tilde, f = _checked(u_tilde, f, lam)
    a = 1.0 + 2.0 * lam
    root = np.sqrt(u_tilde ** 2 + 8.0 * a * lam * f ** 2)
    return (1.0 + u_tilde / root) / (2.0 * a)


def prox_idiv_dlambda(u_tilde, f, lam: float) -> np.ndarray:
    """Pointwise derivative of the prox output with respect to lambda."""
    u_tilde, f = _checked(u_tilde, f, lam)
    a = 1.0 + 2.0 * lam
    root = np.sqrt(u_tilde ** 2 + 8.0 * a * lam * f ** 2)
    return (2.0 * f ** 2 + 8.0 * lam * f ** 2) / (a * root) \
        - (u_tilde + root) / a ** 2
