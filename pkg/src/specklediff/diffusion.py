"""Forward despeckling network.

Each stage applies a learned diffusion force (filter -> pointwise
nonlinearity -> rotated filter) followed by a reaction step: either the
closed-form I-divergence prox (the main model) or a smoothed floor
projection (the comparison variant).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imageops import as_image, conv2d, rotate180
from .influence import RbfGrid, rbf_design, rbf_design_deriv
from .speckle import F_FLOOR, prox_idiv

VARIANTS = ("prox", "projected")

# RBF center range scales with the expected peak amplitude of the inputs
RBF_RADIUS_PER_PEAK = 310.0 / 255.0

# knee sharpness of the smoothed floor projection, relative to the floor
PROJECTION_KNEE = 0.01


def zero_mean_basis(m: int) -> np.ndarray:
    """Orthonormal zero-mean filter basis: the m^2 - 1 non-constant atoms
    of the 2D cosine basis, as columns of an (m^2, m^2 - 1) matrix."""
    if m < 1 or m % 2 != 1:
        raise ValueError(f"filter size must be odd and positive, got {m}")
    n = np.arange(m)
    atoms = np.empty((m, m))
    atoms[0] = np.sqrt(1.0 / m)
    for p in range(1, m):
        atoms[p] = np.sqrt(2.0 / m) * np.cos(np.pi * (n + 0.5) * p / m)
    cols = []
    for p in range(m):
        for q in range(m):
            if p == 0 and q == 0:
                continue
            cols.append(np.outer(atoms[p], atoms[q]).ravel())
    return np.stack(cols, axis=1)


@dataclass
class StageParams:
    """Trainable parameters of one diffusion stage.

    beta parametrizes the reaction weight as lambda = exp(beta), which keeps
    lambda positive during training. Filters are stored as coefficient
    vectors over the zero-mean orthonormal basis, so every kernel has zero
    mean by construction.
    """

    beta: float
    coeffs: np.ndarray   # (num_filters, m^2 - 1)
    weights: np.ndarray  # (num_filters, rbf_count)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.coeffs.ndim != 2 or self.weights.ndim != 2:
            raise ValueError("coeffs and weights must be 2D arrays")
        if self.coeffs.shape[0] != self.weights.shape[0]:
            raise ValueError("coeffs and weights disagree on filter count")

    @property
    def num_filters(self) -> int:
        return self.coeffs.shape[0]

    @property
    def lam(self) -> float:
        return float(np.exp(self.beta))

    def kernels(self, basis: np.ndarray, m: int) -> np.ndarray:
        return (self.coeffs @ basis.T).reshape(self.num_filters, m, m)


@dataclass
class DiffusionModel:
    """An ordered sequence of stages plus everything needed to run them."""

    stages: list[StageParams]
    filter_size: int
    looks: int
    value_range: float = 255.0
    rbf: RbfGrid | None = None
    variant: str = "prox"
    floor: float = 1.0
    generator: str = "philox"
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.stages:
            raise ValueError("model needs at least one stage")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "projected" and self.floor <= 0:
            raise ValueError("projection floor must be positive")
        m = self.filter_size
        if m < 1 or m % 2 != 1:
            raise ValueError(f"filter size must be odd, got {m}")
        nk = self.stages[0].num_filters
        for t, s in enumerate(self.stages):
            if s.coeffs.shape[1] != m * m - 1:
                raise ValueError(f"stage {t}: expected {m*m-1} basis coeffs")
            if s.num_filters != nk:
                raise ValueError("all stages must share the filter count")
        if self.rbf is None:
            self.rbf = default_rbf_grid(self.value_range)
        for t, s in enumerate(self.stages):
            if s.weights.shape[1] != self.rbf.count:
                raise ValueError(f"stage {t}: expected {self.rbf.count} RBF weights")
        self._basis = None

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def num_filters(self) -> int:
        return self.stages[0].num_filters

    @property
    def basis(self) -> np.ndarray:
        if self._basis is None:
            self._basis = zero_mean_basis(self.filter_size)
        return self._basis


def default_rbf_grid(value_range: float, count: int = 63) -> RbfGrid:
    return RbfGrid(count=count, radius=RBF_RADIUS_PER_PEAK * value_range)


@dataclass
class StageTrace:
    """Per-stage intermediates retained for backpropagation."""

    u_prev: np.ndarray
    z: np.ndarray        # (num_filters, H, W) filter responses
    phi_z: np.ndarray    # (num_filters, H, W) nonlinearity outputs
    u_tilde: np.ndarray
    u_next: np.ndarray
    design: np.ndarray | None = None  # (num_filters, H, W, M) RBF design


def smooth_max(x: np.ndarray, floor: float) -> np.ndarray:
    """Differentiable shrinkage approximating max(x, floor).

    Softplus with knee sharpness PROJECTION_KNEE * floor; matches the hard
    maximum to well under 1e-3 away from the knee.
    """
    tau = PROJECTION_KNEE * floor
    return floor + tau * np.logaddexp(0.0, (x - floor) / tau)


def smooth_max_deriv(x: np.ndarray, floor: float) -> np.ndarray:
    tau = PROJECTION_KNEE * floor
    t = (x - floor) / tau
    # stable logistic
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def diffusion_force(u_prev, stage: StageParams, kernels, grid: RbfGrid,
                    keep_design: bool = False):
    """sum_i rot180(k_i) * phi_i(k_i * u); returns (force, z, phi_z, design)."""
    nk = stage.num_filters
    z = np.stack([conv2d(u_prev, kernels[i]) for i in range(nk)])
    design = rbf_design(z, grid)
    phi_z = np.einsum("ihwm,im->ihw", design, stage.weights)
    force = np.zeros_like(u_prev)
    for i in range(nk):
        force += conv2d(phi_z[i], rotate180(kernels[i]))
    return force, z, phi_z, (design if keep_design else None)


def diffusion_step(u_prev, f, stage: StageParams, model: DiffusionModel,
                   keep_design: bool = False):
    """One stage of the main (prox) variant; returns (u_next, trace)."""
    u_prev = as_image(u_prev, "u_prev")
    f = as_image(f, "f")
    kernels = stage.kernels(model.basis, model.filter_size)
    force, z, phi_z, design = diffusion_force(
        u_prev, stage, kernels, model.rbf, keep_design)
    u_tilde = u_prev - force
    u_next = prox_idiv(u_tilde, f, stage.lam)
    return u_next, StageTrace(u_prev, z, phi_z, u_tilde, u_next, design)


def projection_reaction(u_prev, f, lam: float) -> np.ndarray:
    """Reaction force (lambda / u)(1 - f^2 / u^2) of the projection variant."""
    return lam * (1.0 / u_prev - f ** 2 / u_prev ** 3)


def diffusion_step_projected(u_prev, f, stage: StageParams,
                             model: DiffusionModel,
                             keep_design: bool = False):
    """One stage of the floor-projection variant; returns (u_next, trace)."""
    u_prev = as_image(u_prev, "u_prev")
    f = as_image(f, "f")
    floor = model.floor
    if floor <= 0:
        raise ValueError("projection floor must be positive")
    kernels = stage.kernels(model.basis, model.filter_size)
    force, z, phi_z, design = diffusion_force(
        u_prev, stage, kernels, model.rbf, keep_design)
    u_tilde = u_prev - force - projection_reaction(u_prev, f, stage.lam)
    u_next = smooth_max(u_tilde, floor)
    return u_next, StageTrace(u_prev, z, phi_z, u_tilde, u_next, design)


def initial_state(f: np.ndarray, model: DiffusionModel) -> np.ndarray:
    """u_0 for a given observation: the noisy image itself, floored for the
    projection variant (whose stages require u >= floor)."""
    if model.variant == "projected":
        return np.maximum(f, model.floor)
    return np.maximum(f, F_FLOOR)


def run_diffusion(f, model: DiffusionModel, keep_traces: bool = False,
                  keep_design: bool = False):
    """Apply all stages in order; returns (u_T, traces or None)."""
    f = as_image(f, "f")
    if np.any(f < 0):
        raise ValueError("observation must be nonnegative")
    step = diffusion_step if model.variant == "prox" else diffusion_step_projected
    u = initial_state(f, model)
    traces = [] if keep_traces else None
    for t, stage in enumerate(model.stages):
        u, trace = step(u, f, stage, model, keep_design=keep_design)
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite image after stage {t}")
        if keep_traces:
            traces.append(trace)
    return u, traces
