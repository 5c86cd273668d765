"""Multistart Adam optimisation of circuit parameters and minimum-depth search."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .circuit import CircuitEngine, CircuitSpec
from .qsys import SpaceDescriptor, SystemParams

THETA_MIN_DEFAULT = math.radians(10.0)


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters of the multistart optimiser.

    ``theta_bounds=None`` leaves theta unconstrained; ``delta_bounds=None``
    means +-|chi_f| d. ``patience`` (steps) stops a run whose best fidelity
    has not improved by ``min_improvement`` within that window; ``None``
    disables it.
    """

    batch: int = 1000
    steps: int = 3000
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    theta_bounds: tuple | None = (THETA_MIN_DEFAULT, math.pi)
    delta_bounds: tuple | None = None
    optimize_detuning: bool = True
    seed: int = 0
    target_fidelity: float = 1.0 - 1e-4
    trailing_rotation: bool = True
    patience: int | None = None
    min_improvement: float = 1e-5
    record_traces: bool = True

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        for b in (self.theta_bounds, self.delta_bounds):
            if b is not None and not b[0] < b[1]:
                raise ValueError(f"bounds {b} not ordered")

    def resolved_delta_bounds(self, params: SystemParams, d: int):
        if self.delta_bounds is not None:
            return tuple(self.delta_bounds)
        w = abs(params.chi_f) * d
        if w == 0:
            w = params.eps_sb
        return (-w, w)

    def replace(self, **kw) -> "OptimizerConfig":
        import dataclasses

        return dataclasses.replace(self, **kw)


@dataclass
class OptResult:
    best_params: CircuitSpec
    best_fidelity: float
    per_start_trace: np.ndarray  # (steps_run, B) fidelity per start per step
    final_fidelities: np.ndarray  # (B,) best fidelity reached by each start
    converged_starts: int
    converged: bool
    steps_run: int
    wall_time: float

    def summary(self) -> dict:
        return {
            "best_fidelity": self.best_fidelity,
            "converged": self.converged,
            "converged_starts": self.converged_starts,
            "steps_run": self.steps_run,
            "wall_time_s": self.wall_time,
            "circuit": self.best_params.to_json(),
        }


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def _logit(p):
    return np.log(p) - np.log1p(-p)


class _Box:
    """Sigmoid map from an unconstrained variable into [lo, hi] (identity if None)."""

    def __init__(self, bounds):
        self.bounds = bounds

    def forward(self, u):
        if self.bounds is None:
            return u, np.ones_like(u)
        lo, hi = self.bounds
        s = _sigmoid(u)
        return lo + (hi - lo) * s, (hi - lo) * s * (1.0 - s)

    def inverse(self, x):
        if self.bounds is None:
            return np.asarray(x, float)
        lo, hi = self.bounds
        p = np.clip((np.asarray(x, float) - lo) / (hi - lo), 1e-9, 1 - 1e-9)
        return _logit(p)


def initial_parameters(B: int, L: int, config: OptimizerConfig, dbounds, n_final: int = 0):
    """Random start points, one generator per start (seed XOR start index)."""
    tb = config.theta_bounds if config.theta_bounds is not None else (0.0, math.pi)
    out = np.empty((B, 4 * L + 2 * n_final))
    for i in range(B):
        rng = np.random.default_rng(config.seed ^ i)
        th = rng.uniform(tb[0], tb[1], L + n_final)
        pq = rng.uniform(0.0, 2 * math.pi, L + n_final)
        ps = rng.uniform(0.0, 2 * math.pi, L)
        dl = rng.uniform(dbounds[0], dbounds[1], L) if config.optimize_detuning else np.zeros(L)
        out[i, : 4 * L] = np.stack([th[:L], pq[:L], ps, dl], axis=1).ravel()
        if n_final:
            out[i, 4 * L:] = [th[L], pq[L]]
    return out


def multistart_optimize(target, d: int, depth: int, config: OptimizerConfig, params: SystemParams,
                        space: SpaceDescriptor | None = None) -> OptResult:
    """Adam on B random starts minimising mean log(1 - F). Deterministic for a given seed."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if target.d != d:
        raise ValueError("target dimension differs from d")
    t0 = time.perf_counter()
    B, L = config.batch, depth
    nf = 1 if config.trailing_rotation else 0
    engine = CircuitEngine(d, params, space)
    dbounds = config.resolved_delta_bounds(params, d)
    tbox, dbox = _Box(config.theta_bounds), _Box(dbounds)

    x0 = initial_parameters(B, L, config, dbounds, nf)
    core = x0[:, : 4 * L].reshape(B, L, 4)
    u = np.empty_like(core)
    u[..., 0] = tbox.inverse(core[..., 0])
    u[..., 1] = core[..., 1]
    u[..., 2] = core[..., 2]
    u[..., 3] = dbox.inverse(core[..., 3]) if config.optimize_detuning else 0.0
    uf = None
    if nf:
        uf = np.stack([tbox.inverse(x0[:, 4 * L]), x0[:, 4 * L + 1]], axis=1)

    mask = np.ones(4)
    if not config.optimize_detuning:
        mask[3] = 0.0
    m = np.zeros_like(u)
    v = np.zeros_like(u)
    mf = np.zeros_like(uf) if nf else None
    vf = np.zeros_like(uf) if nf else None

    best_F = np.full(B, -1.0)
    best_x = np.zeros((B, L, 4))
    best_xf = np.zeros((B, 2)) if nf else None
    traces = []
    global_best = -1.0
    last_gain_step = 0
    steps_run = 0
    b1, b2 = config.beta1, config.beta2

    def physical(u, uf):
        th, dth = tbox.forward(u[..., 0])
        if config.optimize_detuning:
            dl, ddl = dbox.forward(u[..., 3])
        else:
            dl, ddl = np.zeros_like(u[..., 3]), np.zeros_like(u[..., 3])
        fin = None
        dfin = None
        if nf:
            fth, dfth = tbox.forward(uf[:, 0])
            fin = (fth, uf[:, 1])
            dfin = dfth
        return th, dth, dl, ddl, fin, dfin

    for step in range(config.steps + 1):
        th, dth, dl, ddl, fin, dfin = physical(u, uf)
        F, dF = engine.fidelity(th, u[..., 1], u[..., 2], dl, target, final=fin, grad=True)
        steps_run = step
        improved = F > best_F
        if np.any(improved):
            best_F = np.where(improved, F, best_F)
            best_x[improved] = np.stack([th, u[..., 1], u[..., 2], dl], axis=-1)[improved]
            if nf:
                best_xf[improved] = np.stack(fin, axis=1)[improved]
        if config.record_traces:
            traces.append(F.copy())
        gb = float(best_F.max())
        if gb > global_best + config.min_improvement:
            last_gain_step = step
        global_best = max(global_best, gb)
        if global_best >= config.target_fidelity or step == config.steps:
            break
        if config.patience is not None and step - last_gain_step >= config.patience:
            break
        # loss = mean log(1 - F)
        w = -1.0 / (B * np.maximum(1.0 - F, 1e-15))
        g = np.stack([dF["theta"] * dth, dF["phi_q"], dF["phi_sb"], dF["delta"] * ddl], axis=-1)
        g = g * w[:, None, None] * mask
        t = step + 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        u = u - config.lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + config.eps_adam)
        if nf:
            gf = np.stack([dF["final_theta"] * dfin, dF["final_phi_q"]], axis=1) * w[:, None]
            mf = b1 * mf + (1 - b1) * gf
            vf = b2 * vf + (1 - b2) * gf * gf
            uf = uf - config.lr * (mf / (1 - b1**t)) / (np.sqrt(vf / (1 - b2**t)) + config.eps_adam)

    k = int(np.argmax(best_F))
    bx = best_x[k]
    spec = CircuitSpec.from_arrays(d, bx[:, 0], bx[:, 1], bx[:, 2], bx[:, 3],
                                   final=None if not nf else best_xf[k])
    trace = np.array(traces) if traces else np.zeros((0, B))
    return OptResult(
        best_params=spec,
        best_fidelity=float(best_F[k]),
        per_start_trace=trace,
        final_fidelities=best_F,
        converged_starts=int(np.sum(best_F >= config.target_fidelity)),
        converged=bool(best_F[k] >= config.target_fidelity),
        steps_run=steps_run,
        wall_time=time.perf_counter() - t0,
    )


class DepthCapExceeded(RuntimeError):
    """Raised when no depth up to the cap reaches the threshold; carries the partial record."""

    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass
class DepthRecord:
    depth: int | None
    fidelities: dict = field(default_factory=dict)  # depth -> best fidelity
    results: dict = field(default_factory=dict)  # depth -> OptResult


def depth_search(target, d: int, threshold: float, config: OptimizerConfig, params: SystemParams, *,
                 start_depth: int = 1, max_depth: int = 40, keep_results: bool = False) -> DepthRecord:
    """Linear scan upward from ``start_depth``; stops at the first depth reaching ``threshold``.

    ``start_depth`` is the warm lower bound (e.g. a known-safe depth for a
    smaller d). Each depth stops early as soon as any start crosses the
    threshold.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    cfg = config.replace(target_fidelity=min(threshold, config.target_fidelity))
    rec = DepthRecord(None)
    for L in range(max(1, start_depth), max_depth + 1):
        res = multistart_optimize(target, d, L, cfg, params)
        rec.fidelities[L] = res.best_fidelity
        if keep_results:
            rec.results[L] = res
        if res.best_fidelity >= threshold:
            rec.depth = L
            if not keep_results:
                rec.results[L] = res
            return rec
    raise DepthCapExceeded(f"no depth <= {max_depth} reached fidelity {threshold}", rec)


def bracket_depth_search(target, d: int, threshold: float, config: OptimizerConfig, params: SystemParams, *,
                         guess: int, max_depth: int = 40, keep_results: bool = False) -> DepthRecord:
    """Minimal depth found by probing ``guess`` first, then stepping down or up.

    Successful depths stop as soon as a start crosses the threshold, so
    walking down from a good guess costs a single full-length failing run.
    Assumes the best attainable fidelity is non-decreasing in depth.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    cfg = config.replace(target_fidelity=min(threshold, config.target_fidelity))
    rec = DepthRecord(None)

    def attempt(L):
        res = multistart_optimize(target, d, L, cfg, params)
        rec.fidelities[L] = res.best_fidelity
        if keep_results or res.best_fidelity >= threshold:
            rec.results[L] = res
        return res.best_fidelity >= threshold

    L = min(max(1, guess), max_depth)
    if attempt(L):
        while L > 1 and attempt(L - 1):
            L -= 1
        rec.depth = L
        rec.results = {k: v for k, v in rec.results.items() if keep_results or k == L}
        return rec
    for L in range(L + 1, max_depth + 1):
        if attempt(L):
            rec.depth = L
            return rec
    raise DepthCapExceeded(f"no depth <= {max_depth} reached fidelity {threshold}", rec)


def min_depth_search(target, d: int, threshold: float, config: OptimizerConfig, params: SystemParams,
                     **kw) -> int:
    """Smallest depth whose best multistart fidelity reaches ``threshold``."""
    return depth_search(target, d, threshold, config, params, **kw).depth


@dataclass(frozen=True)
class QuadraticFit:
    a: float
    b: float
    c: float
    residuals: np.ndarray
    r_squared: float

    def __call__(self, d):
        d = np.asarray(d, float)
        return self.a * d**2 + self.b * d + self.c


def depth_scaling_fit(depths: dict, model: str = "quadratic") -> QuadraticFit:
    """Least-squares fit L(d) = a d^2 + b d + c."""
    if model != "quadratic":
        raise ValueError(f"unsupported model {model!r}")
    if len(depths) < 3:
        raise ValueError("need at least three dimensions for a quadratic fit")
    ds = np.array(sorted(depths), float)
    Ls = np.array([depths[k] for k in sorted(depths)], float)
    A = np.stack([ds**2, ds, np.ones_like(ds)], axis=1)
    coef, *_ = np.linalg.lstsq(A, Ls, rcond=None)
    res = Ls - A @ coef
    ss_tot = float(np.sum((Ls - Ls.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res**2)) / ss_tot if ss_tot > 0 else 1.0
    return QuadraticFit(float(coef[0]), float(coef[1]), float(coef[2]), res, r2)
