"""Circuits of alternating ancilla rotations and JC layers.

A depth-L circuit applies, for each layer pair i = 1..L, the composite g-f
rotation R(theta_i, phi_q,i) followed by JC(phi_sb,i, delta_i).  An optional
trailing rotation can be appended.

Two evaluation paths exist:

* dense full-space unitaries (:func:`circuit_unitary`), used for checks and by
  the channel simulation;
* a batched, structure-aware engine (:class:`CircuitEngine`) that propagates
  only the relevant input columns through per-n 3x3 rotation blocks and 2x2
  JC doublets, and returns overlaps with analytic gradients via a reverse
  sweep.  The optimizer runs on the engine.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels, layers
from .layers import NO_ERRORS, PulseErrors
from .qsys import SpaceDescriptor, SystemParams

PARAM_NAMES = ("theta", "phi_q", "phi_sb", "delta")


@dataclass(frozen=True)
class LayerParams:
    """Controls of one (rotation, JC) layer pair. Angles in rad, delta in rad/us."""

    theta: float
    phi_q: float
    phi_sb: float = 0.0
    delta: float = 0.0

    def as_tuple(self):
        return (self.theta, self.phi_q, self.phi_sb, self.delta)

    def to_json(self) -> dict:
        return {
            "theta_rad": float(self.theta),
            "phi_q_rad": float(self.phi_q),
            "phi_sb_rad": float(self.phi_sb),
            "delta_rad_per_us": float(self.delta),
        }

    @classmethod
    def from_json(cls, data: dict) -> "LayerParams":
        return cls(
            float(data["theta_rad"]),
            float(data["phi_q_rad"]),
            float(data.get("phi_sb_rad", 0.0)),
            float(data.get("delta_rad_per_us", 0.0)),
        )


@dataclass(frozen=True)
class CircuitSpec:
    """Depth-L circuit on a d-level qudit.

    ``final_rotation`` optionally appends one more ancilla rotation; only its
    theta and phi_q are used.
    """

    d: int
    layers: tuple = ()
    final_rotation: LayerParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.d < 2:
            raise ValueError("d must be >= 2")
        for lp in self.layers:
            if not all(math.isfinite(x) for x in lp.as_tuple()):
                raise ValueError("non-finite layer parameter")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @classmethod
    def from_arrays(cls, d, theta, phi_q, phi_sb, delta, final=None) -> "CircuitSpec":
        lps = [LayerParams(*map(float, t)) for t in zip(theta, phi_q, phi_sb, delta)]
        fr = None if final is None else LayerParams(float(final[0]), float(final[1]))
        return cls(d, lps, fr)

    def arrays(self):
        """(theta, phi_q, phi_sb, delta) as float arrays of length L."""
        a = np.array([lp.as_tuple() for lp in self.layers], float).reshape(-1, 4)
        return a[:, 0], a[:, 1], a[:, 2], a[:, 3]

    def param_vector(self) -> np.ndarray:
        v = [x for lp in self.layers for x in lp.as_tuple()]
        if self.final_rotation is not None:
            v += [self.final_rotation.theta, self.final_rotation.phi_q]
        return np.array(v, float)

    def with_param_vector(self, v) -> "CircuitSpec":
        v = np.asarray(v, float)
        L = self.depth
        lps = [LayerParams(*v[4 * i: 4 * i + 4]) for i in range(L)]
        fr = None
        if self.final_rotation is not None:
            fr = LayerParams(v[4 * L], v[4 * L + 1])
        return CircuitSpec(self.d, lps, fr)

    def to_json(self) -> dict:
        out = {"d": self.d, "depth": self.depth, "layers": [lp.to_json() for lp in self.layers]}
        if self.final_rotation is not None:
            out["final_rotation"] = self.final_rotation.to_json()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "CircuitSpec":
        fr = data.get("final_rotation")
        return cls(
            int(data["d"]),
            [LayerParams.from_json(x) for x in data["layers"]],
            None if fr is None else LayerParams.from_json(fr),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "CircuitSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TargetGate:
    """Target d x d unitary on the computational states |g,0>..|g,d-1>."""

    unitary: np.ndarray
    label: str = ""

    def __post_init__(self):
        u = np.asarray(self.unitary, complex)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ValueError("target must be a square matrix")
        if np.abs(u.conj().T @ u - np.eye(len(u))).max() > 1e-12:
            raise ValueError("target is not unitary")
        object.__setattr__(self, "unitary", u)

    @property
    def d(self) -> int:
        return self.unitary.shape[0]

    @property
    def projector_rank(self) -> int:
        return self.d


@dataclass(frozen=True)
class StateTarget:
    """State-transfer objective |<psi_target| U |psi_initial>|^2 (qudit vectors)."""

    psi_initial: np.ndarray
    psi_target: np.ndarray
    label: str = ""

    def __post_init__(self):
        for name in ("psi_initial", "psi_target"):
            v = np.asarray(getattr(self, name), complex).ravel()
            if abs(np.linalg.norm(v) - 1.0) > 1e-10:
                raise ValueError(f"{name} is not normalized")
            object.__setattr__(self, name, v)
        if self.psi_initial.shape != self.psi_target.shape:
            raise ValueError("state dimensions differ")

    @property
    def d(self) -> int:
        return len(self.psi_initial)


# ---------------------------------------------------------------------------
# dense evaluation
# ---------------------------------------------------------------------------


def layer_unitaries(spec: CircuitSpec, params: SystemParams, space: SpaceDescriptor | None = None,
                    *, calib: SystemParams | None = None, errors: PulseErrors = NO_ERRORS):
    """Dense unitaries of every pulse layer in time order."""
    space = SpaceDescriptor(spec.d) if space is None else space
    if space.d != spec.d:
        raise ValueError("space and circuit dimensions differ")
    calib = params if calib is None else calib
    out = []
    for lp in spec.layers:
        out.append(layers.composite_gf_rotation(lp.theta, lp.phi_q, params, space, errors))
        out.append(layers.jc_unitary(lp.phi_sb, lp.delta, params, space, calib=calib, errors=errors))
    if spec.final_rotation is not None:
        fr = spec.final_rotation
        out.append(layers.composite_gf_rotation(fr.theta, fr.phi_q, params, space, errors))
    return out


def tree_product(mats, dim: int) -> np.ndarray:
    """Time-ordered product M_k ... M_1 of ``mats`` (given in time order) by pairwise reduction."""
    mats = list(mats)
    if not mats:
        return np.eye(dim, dtype=complex)
    while len(mats) > 1:
        nxt = [mats[i + 1] @ mats[i] for i in range(0, len(mats) - 1, 2)]
        if len(mats) % 2:
            nxt.append(mats[-1])
        mats = nxt
    return mats[0]


def sequential_product(mats, dim: int) -> np.ndarray:
    U = np.eye(dim, dtype=complex)
    for m in mats:
        U = m @ U
    return U


def circuit_unitary(spec: CircuitSpec, params: SystemParams, space: SpaceDescriptor | None = None,
                    *, calib: SystemParams | None = None, errors: PulseErrors = NO_ERRORS):
    """Full-space circuit unitary, computed by pairwise tree reduction."""
    space = SpaceDescriptor(spec.d) if space is None else space
    return tree_product(layer_unitaries(spec, params, space, calib=calib, errors=errors), space.dim)


def _g_block(U, d, space):
    idx = space.g_indices()
    if U.shape != (space.dim, space.dim):
        raise ValueError(f"unitary of shape {U.shape} does not act on a space of dim {space.dim}")
    return U[np.ix_(idx, idx)]


def gate_fidelity(U, target: TargetGate, space: SpaceDescriptor) -> float:
    """|Tr(P U^dag U_target)|^2 / d^2 with P the |g,n<d> projector."""
    if target.d != space.d:
        raise ValueError("target and space dimensions differ")
    block = _g_block(np.asarray(U), target.d, space)
    o = np.trace(block.conj().T @ target.unitary)
    return float(abs(o) ** 2 / target.d**2)


def state_fidelity(U, psi_initial, psi_target) -> float:
    """|<psi_target| U |psi_initial>|^2 for normalized full-space vectors."""
    psi_initial = np.asarray(psi_initial, complex).ravel()
    psi_target = np.asarray(psi_target, complex).ravel()
    for v in (psi_initial, psi_target):
        if abs(np.linalg.norm(v) - 1.0) > 1e-10:
            raise ValueError("state is not normalized")
    return float(abs(np.vdot(psi_target, np.asarray(U) @ psi_initial)) ** 2)


def embed_state(psi, space: SpaceDescriptor) -> np.ndarray:
    """Qudit vector placed on |g,0>..|g,d-1>."""
    out = np.zeros(space.dim, complex)
    out[space.g_indices()] = psi
    return out


# ---------------------------------------------------------------------------
# batched structured engine
# ---------------------------------------------------------------------------


def objective_columns(target, space: SpaceDescriptor):
    """Input/target columns (3, N, C) and normalisation for a gate or state objective."""
    N, d = space.n_levels, space.d
    if isinstance(target, TargetGate):
        X = np.zeros((3, N, d), complex)
        X[0, np.arange(d), np.arange(d)] = 1.0
        Y = np.zeros((3, N, d), complex)
        Y[0, :d, :] = target.unitary
        return X, Y, float(d)
    if isinstance(target, StateTarget):
        X = np.zeros((3, N, 1), complex)
        Y = np.zeros((3, N, 1), complex)
        X[0, :d, 0] = target.psi_initial
        Y[0, :d, 0] = target.psi_target
        return X, Y, 1.0
    raise TypeError(f"unsupported target {type(target).__name__}")


def _apply_rot(blocks, x, adjoint=False):
    # blocks (B, N, 3, 3), x (B, 3, N, C)
    return _kernels.rot_apply(np.ascontiguousarray(blocks), x, adjoint)


def _apply_jc(jc: layers.JCBlocks, x, d, g0=1.0, adjoint=False):
    """Apply a batched JC layer (or its derivative when g0 = 0) to x (B, 3, N, C)."""
    f_top = jc.f_top if jc.f_top is not None else np.zeros(x.shape[0], complex)
    return _kernels.jc_apply(np.ascontiguousarray(jc.doublets), np.ascontiguousarray(jc.e_phase),
                             np.ascontiguousarray(f_top, dtype=complex), x, d, complex(g0), adjoint)


class CircuitEngine:
    """Batched overlap/gradient evaluation for fixed (d, L, params, space).

    Parameters are arrays of shape (B, L); ``final`` optionally holds
    (theta, phi_q) arrays of shape (B,) for a trailing rotation.  The overlap
    is o = sum_c <y_c, U x_c> for input columns X and target columns Y.
    """

    def __init__(self, d: int, params: SystemParams, space: SpaceDescriptor | None = None, *,
                 calib: SystemParams | None = None, errors: PulseErrors = NO_ERRORS):
        self.d = d
        self.params = params
        self.space = SpaceDescriptor(d) if space is None else space
        self.calib = params if calib is None else calib
        self.errors = errors
        self.n = np.arange(self.space.n_levels, dtype=float)
        self._ef_first = layers.r_ef_block(self.n, math.pi, math.pi, params)
        self._ef_last = layers.r_ef_block(self.n, math.pi, 0.0, params)
        # scalar tables for the fused kernel
        _, ge_e, ge_f, _ = layers.ge_generator(self.n, 0.0, params, detuning=errors.ge_detuning)
        nd = np.arange(d + 1, dtype=float)
        mean, half, _, _ = layers._jc_energies(nd, 0.0, params)
        _, _, _, e_en = layers._jc_energies(self.n, 0.0, params)
        self._tables = (
            np.ascontiguousarray(self._ef_first), np.ascontiguousarray(self._ef_last),
            np.ascontiguousarray(ge_e, float), np.ascontiguousarray(ge_f, float),
            float(params.eps_ge), float(errors.ge_detuning), float(errors.tau_ge_offset),
            int(d), mean + half, (mean - half)[:d].copy(), np.ascontiguousarray(e_en, float),
            float(params.eps_sb), float(self.calib.eps_sb),
            float(layers.carrier_detuning(0.0, self.calib, d) + errors.sb_detuning),
            float(errors.tau_sb_offset),
        )

    def _rot(self, theta, phi, derivs):
        """Composite blocks for theta, phi of shape (L, B) -> (L, B, N, 3, 3)."""
        res = layers.ge_block_derivs(self.n, theta[..., None], phi[..., None], self.params, self.errors)
        shp = res[0].shape
        out = []
        for r in res if derivs else res[:1]:
            r = np.ascontiguousarray(r).reshape((-1,) + shp[-3:])
            out.append(_kernels.sandwich(self._ef_last, r, self._ef_first).reshape(shp))
        return out

    def _jc(self, phi_sb, delta, derivs):
        return layers.jc_blocks(phi_sb, delta, self.params, self.d, self.space.n_levels,
                                calib=self.calib, errors=self.errors, derivs=derivs)

    def evaluate(self, theta, phi_q, phi_sb, delta, X, Y, final=None, grad=True):
        """Overlaps o (B,) and, with ``grad``, do/dp as a dict of (B, L) arrays.

        With a trailing rotation the keys ``final_theta`` / ``final_phi_q``
        hold (B,) derivatives. Runs the fused compiled sweep; see
        :meth:`evaluate_reference` for the array-level implementation.
        """
        arrs = [np.ascontiguousarray(np.atleast_2d(np.asarray(a, float))) for a in (theta, phi_q, phi_sb, delta)]
        B = arrs[0].shape[0]
        if final is None:
            ft = fp = np.zeros(B)
        else:
            ft = np.ascontiguousarray(np.broadcast_to(np.asarray(final[0], float), (B,)))
            fp = np.ascontiguousarray(np.broadcast_to(np.asarray(final[1], float), (B,)))
        X = np.ascontiguousarray(X, dtype=complex)
        Y = np.ascontiguousarray(Y, dtype=complex)
        o, g, gf = _kernels.fused_sweep(*arrs, ft, fp, final is not None, X, Y, *self._tables, grad)
        if not grad:
            return o, None
        out = {k: g[:, i, :] for i, k in enumerate(PARAM_NAMES)}
        if final is not None:
            out["final_theta"] = gf[:, 0]
            out["final_phi_q"] = gf[:, 1]
        return o, out

    def evaluate_reference(self, theta, phi_q, phi_sb, delta, X, Y, final=None, grad=True):
        """Same contract as :meth:`evaluate`, built from vectorised layer blocks."""
        theta, phi_q, phi_sb, delta = (np.atleast_2d(np.asarray(a, float)).T for a in (theta, phi_q, phi_sb, delta))
        L, B = theta.shape
        rots = self._rot(theta, phi_q, grad)
        jcs = self._jc(phi_sb, delta, grad)
        jb, djb = (jcs if grad else (jcs, None))

        def jc_at(blk, i):
            return layers.JCBlocks(blk.doublets[i], blk.e_phase[i],
                                   None if blk.f_top is None else blk.f_top[i], None, None)

        x = np.ascontiguousarray(np.broadcast_to(X, (B,) + X.shape), dtype=complex)
        xs = [x]
        for i in range(L):
            x = _apply_rot(rots[0][i], x)
            xs.append(x)
            x = _apply_jc(jc_at(jb, i), x, self.d)
            xs.append(x)
        fr = None
        if final is not None:
            fr = self._rot(np.atleast_1d(final[0]).astype(float)[None], np.atleast_1d(final[1]).astype(float)[None], grad)
            x = _apply_rot(fr[0][0], x)
            xs.append(x)
        o = np.einsum("inc,binc->b", Y.conj(), x, optimize=False)
        if not grad:
            return o, None

        out = {k: np.zeros((B, L), complex) for k in PARAM_NAMES}
        lam = np.ascontiguousarray(np.broadcast_to(Y, (B,) + Y.shape), dtype=complex)
        ip = _kernels.inner
        k = len(xs) - 1
        if fr is not None:
            k -= 1
            out["final_theta"] = ip(lam, _apply_rot(fr[1][0], xs[k]))
            out["final_phi_q"] = ip(lam, _apply_rot(fr[2][0], xs[k]))
            lam = _apply_rot(fr[0][0], lam, adjoint=True)
        for i in reversed(range(L)):
            x_in, y = xs[k - 1], xs[k]
            k -= 2
            out["delta"][:, i] = ip(lam, _apply_jc(jc_at(djb, i), x_in, self.d, g0=0.0))
            lam_in = _apply_jc(jc_at(jb, i), lam, self.d, adjoint=True)
            # <lam, dU/dphi x> with dU/dphi = i[K, U], K = -|f><f|
            out["phi_sb"][:, i] = 1j * (ip(lam_in[:, 2:], x_in[:, 2:]) - ip(lam[:, 2:], y[:, 2:]))
            lam = lam_in
            x_in = xs[k]
            out["theta"][:, i] = ip(lam, _apply_rot(rots[1][i], x_in))
            out["phi_q"][:, i] = ip(lam, _apply_rot(rots[2][i], x_in))
            lam = _apply_rot(rots[0][i], lam, adjoint=True)
        return o, out

    def fidelity(self, theta, phi_q, phi_sb, delta, target, final=None, grad=False):
        """Fidelities (B,) and optionally dF/dp for a gate or state objective."""
        X, Y, norm = objective_columns(target, self.space)
        o, do = self.evaluate(theta, phi_q, phi_sb, delta, X, Y, final=final, grad=grad)
        F = np.abs(o) ** 2 / norm**2
        if not grad:
            return F, None
        dF = {k: 2.0 * np.real(np.conj(o)[:, None] * v if v.ndim == 2 else np.conj(o) * v) / norm**2
              for k, v in do.items()}
        return F, dF


def spec_fidelity(spec: CircuitSpec, params: SystemParams, target, space: SpaceDescriptor | None = None,
                  *, calib: SystemParams | None = None, errors: PulseErrors = NO_ERRORS) -> float:
    """Fidelity of one circuit through the structured engine."""
    eng = CircuitEngine(spec.d, params, space, calib=calib, errors=errors)
    th, pq, ps, dl = spec.arrays()
    final = None
    if spec.final_rotation is not None:
        final = (np.array([spec.final_rotation.theta]), np.array([spec.final_rotation.phi_q]))
    F, _ = eng.fidelity(th[None], pq[None], ps[None], dl[None], target, final=final)
    return float(F[0])


def gradient(spec: CircuitSpec, params: SystemParams, target, space: SpaceDescriptor | None = None) -> np.ndarray:
    """Analytic dF/dp in :meth:`CircuitSpec.param_vector` order.

    The layer formulas are smooth in every parameter, so the derivative is
    two-sided everywhere; bounds on theta live in the optimizer's
    reparameterisation, not here.
    """
    eng = CircuitEngine(spec.d, params, space)
    th, pq, ps, dl = spec.arrays()
    final = None
    if spec.final_rotation is not None:
        final = (np.array([spec.final_rotation.theta]), np.array([spec.final_rotation.phi_q]))
    _, dF = eng.fidelity(th[None], pq[None], ps[None], dl[None], target, final=final, grad=True)
    g = np.stack([dF[k][0] for k in PARAM_NAMES], axis=1).ravel()
    if final is not None:
        g = np.concatenate([g, [dF["final_theta"][0], dF["final_phi_q"][0]]])
    return g


def finite_difference_gradient(spec: CircuitSpec, params: SystemParams, target, h: float = 1e-5,
                               space: SpaceDescriptor | None = None) -> np.ndarray:
    """Central-difference dF/dp using dense circuit unitaries."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("step h must lie in [1e-7, 1e-3]")
    space = SpaceDescriptor(spec.d) if space is None else space

    def fid(s):
        U = circuit_unitary(s, params, space)
        if isinstance(target, TargetGate):
            return gate_fidelity(U, target, space)
        return state_fidelity(U, embed_state(target.psi_initial, space), embed_state(target.psi_target, space))

    v = spec.param_vector()
    g = np.zeros_like(v)
    for k in range(len(v)):
        vp, vm = v.copy(), v.copy()
        vp[k] += h
        vm[k] -= h
        g[k] = (fid(spec.with_param_vector(vp)) - fid(spec.with_param_vector(vm))) / (2 * h)
    return g
