"""Supervised training of all stage parameters.

Gradients are computed analytically by backpropagating through the unrolled
diffusion: the prox (or smoothed projection) contributes a pointwise diagonal
factor, the diffusion force contributes transposed convolutions, and every
parameter gradient is a contraction of stored stage intermediates against the
running adjoint. Optimization uses limited-memory quasi-Newton steps with a
sufficient-decrease line search (scipy's L-BFGS-B).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .diffusion import (DiffusionModel, StageParams, StageTrace,
                        default_rbf_grid, diffusion_step,
                        diffusion_step_projected, initial_state,
                        projection_reaction, smooth_max_deriv)
from .imageops import as_image, conv2d_adjoint, patch_correlation, rotate180
from .influence import linear_ramp_weights, rbf_design
from .speckle import NoisyPair, prox_idiv, prox_idiv_dlambda, prox_idiv_dutilde

logger = logging.getLogger(__name__)

SCHEDULES = ("greedy", "joint", "greedy-then-joint")


def loss(u_out, u_gt) -> float:
    """Quadratic training loss 0.5 * ||u_out - u_gt||^2."""
    u_out = as_image(u_out, "u_out")
    u_gt = as_image(u_gt, "u_gt")
    if u_out.shape != u_gt.shape:
        raise ValueError("loss operands must share dimensions")
    d = u_out - u_gt
    return 0.5 * float(np.dot(d.ravel(), d.ravel()))


def loss_grad(u_out, u_gt) -> np.ndarray:
    return np.asarray(u_out, float) - np.asarray(u_gt, float)


@dataclass
class StageGradients:
    beta: float
    coeffs: np.ndarray
    weights: np.ndarray


def backprop_adjoint(trace: StageTrace, stage: StageParams, f: np.ndarray,
                     adjoint_next: np.ndarray, model: DiffusionModel) -> np.ndarray:
    """Apply the transposed stage Jacobian (d u_next / d u_prev)^T."""
    g_prev, _ = _stage_backward(trace, stage, f, adjoint_next, model,
                                want_params=False)
    return g_prev


def grad_stage_params(trace: StageTrace, stage: StageParams, f: np.ndarray,
                      adjoint_next: np.ndarray,
                      model: DiffusionModel) -> StageGradients:
    """Gradients of the loss w.r.t. one stage's {beta, coeffs, weights}."""
    _, grads = _stage_backward(trace, stage, f, adjoint_next, model,
                               want_params=True, want_adjoint=False)
    return grads


def _stage_backward(trace: StageTrace, stage: StageParams, f: np.ndarray,
                    g_next: np.ndarray, model: DiffusionModel,
                    want_params: bool = True, want_adjoint: bool = True):
    lam = stage.lam
    m = model.filter_size
    basis = model.basis
    kernels = stage.kernels(basis, m)
    nk = stage.num_filters

    if model.variant == "prox":
        y = prox_idiv_dutilde(trace.u_tilde, f, lam)
    else:
        y = smooth_max_deriv(trace.u_tilde, model.floor)
    g_t = y * g_next  # adjoint at u_tilde

    design = trace.design
    if design is None:
        design = rbf_design(trace.z, model.rbf)
    # phi'(z) without new exponentials: (G (w*mu) - z (G w)) / gamma^2,
    # where G w is the stored phi(z)
    grid = model.rbf
    moment = np.einsum("ihwm,im->ihw", design,
                       stage.weights * grid.centers)
    phi_prime = (moment - trace.z * trace.phi_z) / grid.gamma ** 2

    grads = None
    if want_params:
        if model.variant == "prox":
            x = prox_idiv_dlambda(trace.u_tilde, f, lam)
            grad_beta = lam * float(np.sum(x * g_next))
        else:
            r = projection_reaction(trace.u_prev, f, 1.0)
            grad_beta = -lam * float(np.sum(r * g_t))
        grad_coeffs = np.empty_like(stage.coeffs)
        grad_weights = np.empty_like(stage.weights)

    g_prev = g_t.copy() if want_adjoint else None
    for i in range(nk):
        v = conv2d_adjoint(g_t, rotate180(kernels[i]))
        w1 = phi_prime[i] * v
        if want_params:
            grad_weights[i] = -np.einsum("hwm,hw->m", design[i], v)
            gk = -patch_correlation(trace.u_prev, w1, m)[::-1, ::-1] \
                - patch_correlation(trace.phi_z[i], g_t, m)
            grad_coeffs[i] = basis.T @ gk.ravel()
        if want_adjoint:
            g_prev -= conv2d_adjoint(w1, kernels[i])
    if want_adjoint and model.variant == "projected":
        # reaction term also depends on u_prev directly
        u = trace.u_prev
        g_prev -= lam * (-1.0 / u ** 2 + 3.0 * f ** 2 / u ** 4) * g_t

    if want_params:
        grads = StageGradients(grad_beta, grad_coeffs, grad_weights)
    return g_prev, grads


def _forward(model: DiffusionModel, f: np.ndarray, upto: int,
             keep_from: int, u0: np.ndarray | None = None):
    """Run stages [0, upto]; keep traces for stages >= keep_from."""
    step = diffusion_step if model.variant == "prox" else diffusion_step_projected
    u = initial_state(f, model) if u0 is None else u0
    traces: dict[int, StageTrace] = {}
    for t in range(upto + 1):
        u, trace = step(u, f, model.stages[t], model, keep_design=True)
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite image after stage {t}")
        if t >= keep_from:
            traces[t] = trace
    return u, traces


def loss_and_gradients(model: DiffusionModel, pairs, grad_stages,
                       loss_stage: int, inputs=None):
    """Total loss at the output of `loss_stage` plus gradients for the
    requested stages, accumulated over samples in ascending order.

    `inputs` optionally replaces u_0 per sample (used by the greedy schedule
    to avoid re-running frozen prefix stages).
    """
    grad_stages = sorted(grad_stages)
    lowest = grad_stages[0]
    total = 0.0
    acc = {t: None for t in grad_stages}
    for s, pair in enumerate(pairs):
        u0 = None if inputs is None else inputs[s]
        u_out, traces = _forward(model, pair.noisy, loss_stage, lowest, u0=u0)
        total += loss(u_out, pair.clean)
        g = loss_grad(u_out, pair.clean)
        for t in range(loss_stage, lowest - 1, -1):
            want_adj = t > lowest
            g_prev, grads = _stage_backward(
                traces[t], model.stages[t], pair.noisy, g, model,
                want_params=t in acc, want_adjoint=want_adj)
            if t in acc:
                if acc[t] is None:
                    acc[t] = grads
                else:
                    acc[t].beta += grads.beta
                    acc[t].coeffs += grads.coeffs
                    acc[t].weights += grads.weights
            g = g_prev
    return total, acc


def _pack(model: DiffusionModel, stages) -> np.ndarray:
    parts = []
    for t in sorted(stages):
        s = model.stages[t]
        parts.append([s.beta])
        parts.append(s.coeffs.ravel())
        parts.append(s.weights.ravel())
    return np.concatenate([np.asarray(p, float) for p in parts])


def _unpack(model: DiffusionModel, stages, vec: np.ndarray) -> None:
    pos = 0
    for t in sorted(stages):
        s = model.stages[t]
        s.beta = float(vec[pos]); pos += 1
        n = s.coeffs.size
        s.coeffs = vec[pos:pos + n].reshape(s.coeffs.shape).copy(); pos += n
        n = s.weights.size
        s.weights = vec[pos:pos + n].reshape(s.weights.shape).copy(); pos += n
    if pos != vec.size:
        raise ValueError("parameter vector size mismatch")


def _pack_grads(acc, stages) -> np.ndarray:
    parts = []
    for t in sorted(stages):
        g = acc[t]
        parts.append([g.beta])
        parts.append(g.coeffs.ravel())
        parts.append(g.weights.ravel())
    return np.concatenate([np.asarray(p, float) for p in parts])


@dataclass
class TrainConfig:
    samples: list[NoisyPair]
    looks: int
    stage_count: int = 5
    filter_size: int = 3
    num_filters: int | None = None      # default m^2 - 1
    rbf_count: int = 63
    value_range: float = 255.0
    schedule: str = "greedy-then-joint"
    optimizer_iters: int = 200
    joint_iters: int | None = None      # defaults to optimizer_iters
    seed: int = 0
    gradient_check: bool = False
    variant: str = "prox"
    floor: float = 1.0
    greedy_loss_at_final: bool = False  # greedy loss at u_T instead of u_t
    init_filter_scale: float = 1.0
    init_slope: float = 0.01
    log_fn: object = None               # callable(str); defaults to logger.info

    def __post_init__(self):
        if not self.samples:
            raise ValueError("need at least one training sample")
        if any(p.config.looks != self.looks for p in self.samples):
            raise ValueError("all samples must share the looks value")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.stage_count < 1 or self.optimizer_iters < 1:
            raise ValueError("stage_count and optimizer_iters must be positive")


def _probe_lambda(model: DiffusionModel, pair: NoisyPair) -> float:
    """Pick lambda_0 so the prox pull roughly balances the diffusion force
    on a probe sample; bisection on log-lambda."""
    f = pair.noisy
    u0 = initial_state(f, model)
    step = diffusion_step if model.variant == "prox" else diffusion_step_projected
    _, trace = step(u0, f, model.stages[0], model)
    u_tilde = trace.u_tilde
    force = float(np.mean(np.abs(u0 - u_tilde)))
    if force <= 0:
        return 0.1
    target = 0.5 * force
    lo, hi = -8.0, 4.0  # log10 range
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        pull = float(np.mean(np.abs(prox_idiv(u_tilde, f, 10.0 ** mid) - u_tilde)))
        if pull < target:
            lo = mid
        else:
            hi = mid
    return 10.0 ** (0.5 * (lo + hi))


def init_model(cfg: TrainConfig) -> DiffusionModel:
    m = cfg.filter_size
    nk = cfg.num_filters if cfg.num_filters is not None else m * m - 1
    if not 1 <= nk <= m * m - 1:
        raise ValueError(f"num_filters must be in [1, {m*m-1}]")
    rng = np.random.default_rng(cfg.seed)
    grid = default_rbf_grid(cfg.value_range, count=cfg.rbf_count)
    ramp = linear_ramp_weights(grid, cfg.init_slope)
    stages = []
    for _ in range(cfg.stage_count):
        coeffs = rng.standard_normal((nk, m * m - 1))
        coeffs *= cfg.init_filter_scale / np.linalg.norm(coeffs, axis=1,
                                                         keepdims=True)
        stages.append(StageParams(beta=0.0, coeffs=coeffs,
                                  weights=np.tile(ramp, (nk, 1))))
    model = DiffusionModel(
        stages=stages, filter_size=m, looks=cfg.looks,
        value_range=cfg.value_range, rbf=grid, variant=cfg.variant,
        floor=cfg.floor, seed=cfg.seed,
        metadata={"schedule": cfg.schedule})
    lam0 = _probe_lambda(model, cfg.samples[0])
    beta0 = float(np.log(lam0))
    for s in model.stages:
        s.beta = beta0
    model.metadata["lambda0"] = lam0
    return model


def _optimize_block(model: DiffusionModel, pairs, stages, loss_stage: int,
                    maxiter: int, label: str, log_fn, inputs=None) -> float:
    last = {}

    def objective(vec):
        _unpack(model, stages, vec)
        total, acc = loss_and_gradients(model, pairs, stages, loss_stage,
                                        inputs=inputs)
        grad = _pack_grads(acc, stages)
        last["vec"] = vec.copy()
        last["loss"] = total
        last["gnorm"] = float(np.linalg.norm(grad))
        return total, grad

    it = {"k": 0}

    def callback(_xk):
        it["k"] += 1
        log_fn(f"stage={label} iter={it['k']} loss={last['loss']:.8g} "
               f"gradnorm={last['gnorm']:.6g}")

    x0 = _pack(model, stages)
    f0, _ = objective(x0)
    if not np.isfinite(f0):
        raise FloatingPointError(
            f"non-finite loss {f0} at start of block {label}")
    res = optimize.minimize(objective, x0, jac=True, method="L-BFGS-B",
                            callback=callback,
                            options={"maxiter": maxiter, "maxcor": 10})
    # keep the best iterate; L-BFGS-B may end on a failed line-search point
    if res.fun <= f0:
        _unpack(model, stages, res.x)
        return float(res.fun)
    _unpack(model, stages, x0)
    return f0


def train(cfg: TrainConfig) -> DiffusionModel:
    """Greedy and/or joint optimization of all stage parameters."""
    log_fn = cfg.log_fn if cfg.log_fn is not None else logger.info
    model = init_model(cfg)
    pairs = cfg.samples

    if cfg.gradient_check:
        crop = NoisyPair(pairs[0].clean[:8, :8].copy(),
                         pairs[0].noisy[:8, :8].copy(), pairs[0].config)
        report = finite_diff_check(model, crop)
        if not report.passed:
            raise FloatingPointError(
                f"gradient check failed: max rel error {report.max_error:.3g}")

    T = cfg.stage_count
    joint_iters = cfg.joint_iters if cfg.joint_iters is not None \
        else cfg.optimizer_iters

    if cfg.schedule in ("greedy", "greedy-then-joint"):
        for t in range(T):
            if cfg.greedy_loss_at_final:
                _optimize_block(model, pairs, [t], T - 1, cfg.optimizer_iters,
                                str(t + 1), log_fn)
            else:
                # frozen prefix: precompute each sample's stage input once
                inputs = None
                if t > 0:
                    inputs = [_forward(model, p.noisy, t - 1, t)[0]
                              for p in pairs]
                _optimize_block(_suffix_view(model, t), pairs, [0], 0,
                                cfg.optimizer_iters, str(t + 1), log_fn,
                                inputs=inputs)
    if cfg.schedule in ("joint", "greedy-then-joint"):
        _optimize_block(model, pairs, list(range(T)), T - 1, joint_iters,
                        "joint", log_fn)
    return model


def _suffix_view(model: DiffusionModel, t: int) -> DiffusionModel:
    """A shallow model view whose stage 0 is the original stage t; parameter
    objects are shared, so optimizing the view updates the real model."""
    view = DiffusionModel.__new__(DiffusionModel)
    view.stages = model.stages[t:]
    view.filter_size = model.filter_size
    view.looks = model.looks
    view.value_range = model.value_range
    view.rbf = model.rbf
    view.variant = model.variant
    view.floor = model.floor
    view.generator = model.generator
    view.seed = model.seed
    view.metadata = model.metadata
    view._basis = model.basis
    return view


@dataclass
class GradCheckReport:
    max_error: float
    group_errors: dict = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def finite_diff_check(model: DiffusionModel, pair: NoisyPair,
                      tolerance: float = 1e-4,
                      rel_step: float = 1e-3) -> GradCheckReport:
    """Compare every analytic parameter gradient to central differences.

    Uses Richardson extrapolation over steps h and h/2 so a large base step
    can be used; this keeps round-off (which scales as 1/h) small while the
    extrapolation removes the leading h^2 truncation term.
    """
    T = model.num_stages
    stages = list(range(T))
    x0 = _pack(model, stages)
    _, acc = loss_and_gradients(model, [pair], stages, T - 1)
    analytic = _pack_grads(acc, stages)

    def f_at(vec):
        _unpack(model, stages, vec)
        u, _ = _forward(model, pair.noisy, T - 1, T)
        return loss(u, pair.clean)

    def central(j, h):
        xp = x0.copy(); xp[j] += h
        xm = x0.copy(); xm[j] -= h
        return (f_at(xp) - f_at(xm)) / (2.0 * h)

    f0 = f_at(x0)
    fd = np.empty_like(analytic)
    noise = np.empty_like(analytic)
    for j in range(x0.size):
        h = rel_step * max(abs(x0[j]), 1.0)
        fd[j] = (4.0 * central(j, 0.5 * h) - central(j, h)) / 3.0
        # round-off floor of the difference quotient at the smaller step
        noise[j] = 1e-14 * max(abs(f0), 1.0) / (0.5 * h)
    _unpack(model, stages, x0)

    groups = _group_slices(model, stages)
    scale = max(1.0, float(np.max(np.abs(fd))))
    errors = {}
    for name, idx in groups.items():
        a, d = analytic[idx], fd[idx]
        # a disagreement below the FD noise floor is unmeasurable, not
        # wrong; the 1e4 factor maps sub-noise disagreements below the
        # 1e-4 reference tolerance
        denom = np.maximum(np.maximum(np.abs(a), np.abs(d)),
                           np.maximum(noise[idx] * 1e4, 1e-8 * scale))
        errors[name] = float(np.max(np.abs(a - d) / denom)) if a.size else 0.0
    return GradCheckReport(max_error=max(errors.values()),
                           group_errors=errors, tolerance=tolerance)


def _group_slices(model: DiffusionModel, stages):
    idx = {"beta": [], "coeffs": [], "weights": []}
    pos = 0
    for t in sorted(stages):
        s = model.stages[t]
        idx["beta"].append(pos); pos += 1
        idx["coeffs"].extend(range(pos, pos + s.coeffs.size))
        pos += s.coeffs.size
        idx["weights"].extend(range(pos, pos + s.weights.size))
        pos += s.weights.size
    return {k: np.asarray(v, dtype=int) for k, v in idx.items()}
