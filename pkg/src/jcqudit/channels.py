"""Lindblad simulation of circuits as transfer matrices, qudit-subspace
restriction, Choi matrices, process fidelities and per-channel error budgets.

Density matrices are vectorised by stacking columns, so that
vec(A rho B) = (B^T kron A) vec(rho).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from . import layers
from .circuit import CircuitSpec
from .layers import NO_ERRORS, LayerKind, PulseErrors
from .qsys import SpaceDescriptor, SystemParams

# jump operator kinds: transmon matrix element (row, col) or the oscillator lowering operator
_TRANSMON_OPS = {"g<e": (0, 1), "e<f": (1, 2), "e<e": (1, 1), "f<f": (2, 2)}
JUMP_KINDS = tuple(_TRANSMON_OPS) + ("a",)

# channel groups used when ranking error sources
CHANNEL_GROUPS = {
    "transmon_decay": ("decay_ge", "decay_ef"),
    "transmon_dephasing": ("dephasing_e", "dephasing_f"),
    "cavity_decay": ("cavity_decay",),
}


@dataclass(frozen=True)
class Jump:
    name: str
    kind: str
    rate: float  # 1/us

    def __post_init__(self):
        if self.kind not in JUMP_KINDS:
            raise ValueError(f"unknown jump operator kind {self.kind!r}")
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ValueError(f"rate of {self.name} must be finite and >= 0")

    def operator(self, n_levels: int) -> np.ndarray:
        if self.kind == "a":
            a = np.diag(np.sqrt(np.arange(1, n_levels)), 1)
            return np.kron(np.eye(3), a)
        i, j = _TRANSMON_OPS[self.kind]
        t = np.zeros((3, 3))
        t[i, j] = 1.0
        return np.kron(t, np.eye(n_levels))


@dataclass(frozen=True)
class NoiseModel:
    """Jump operators with rates; the default set is the reference device's."""

    jumps: tuple = field(default_factory=tuple)

    @classmethod
    def default(cls) -> "NoiseModel":
        return cls((
            Jump("decay_ge", "g<e", 1 / 55.83),
            Jump("decay_ef", "e<f", 1 / 28.85),
            Jump("dephasing_e", "e<e", 1 / 81.76),
            Jump("dephasing_f", "f<f", 1 / 99.94),
            Jump("cavity_decay", "a", 1 / 1298.0),
        ))

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(())

    @property
    def names(self) -> tuple:
        return tuple(j.name for j in self.jumps)

    def only(self, *names) -> "NoiseModel":
        """Same model with every channel not listed set to zero rate."""
        unknown = set(names) - set(self.names)
        if unknown:
            raise KeyError(f"unknown channels {sorted(unknown)}")
        return NoiseModel(tuple(j if j.name in names else Jump(j.name, j.kind, 0.0) for j in self.jumps))

    def operators(self, n_levels: int):
        return [(j.operator(n_levels), j.rate) for j in self.jumps if j.rate > 0]


def liouvillian(H: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """Column-stacking superoperator of -i[H, .] + sum_k gamma_k D[L_k]."""
    H = np.asarray(H, complex)
    n = H.shape[0]
    if n % 3:
        raise ValueError("Hamiltonian dimension must be a multiple of 3")
    if np.abs(H - H.conj().T).max() > 1e-9 * max(1.0, np.abs(H).max()):
        raise ValueError("Hamiltonian is not Hermitian")
    eye = np.eye(n)
    Lv = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for Lk, g in noise.operators(n // 3):
        LdL = Lk.conj().T @ Lk
        Lv += g * (np.kron(Lk.conj(), Lk) - 0.5 * np.kron(eye, LdL) - 0.5 * np.kron(LdL.T, eye))
    return Lv


def unitary_superop(U: np.ndarray) -> np.ndarray:
    """rho -> U rho U^dag."""
    return np.kron(np.asarray(U).conj(), U)


def _pulse_propagator(H, frame, tau, noise):
    # the frame is diagonal, so its superoperator conj(F) kron F is a row scaling
    return np.kron(np.conj(frame), frame)[:, None] * expm(liouvillian(H, noise) * tau)


def layer_propagator(kind: LayerKind, layer_params: dict, sys_params: SystemParams, noise: NoiseModel,
                     space: SpaceDescriptor, *, calib: SystemParams | None = None,
                     errors: PulseErrors = NO_ERRORS) -> np.ndarray:
    """Transfer matrix of one layer with noise acting during its pulses.

    ``CompositeGF`` takes ``theta`` / ``phi`` and chains its three pulses.
    """
    if kind is LayerKind.COMPOSITE_GF:
        pulses = layers.composite_pulses(layer_params["theta"], layer_params["phi"], sys_params, space, errors)
    else:
        pulses = [layers.layer_hamiltonian(kind, layer_params, sys_params, space, calib=calib, errors=errors)]
    E = np.eye(space.dim**2, dtype=complex)
    for H, frame, tau in pulses:
        E = _pulse_propagator(H, frame, tau, noise) @ E
    return E


def circuit_pulses(spec: CircuitSpec, params: SystemParams, space: SpaceDescriptor, *,
                   calib: SystemParams | None = None, errors: PulseErrors = NO_ERRORS,
                   clock: float | None = None):
    """(H, frame, tau) of every pulse in time order.

    With ``clock`` each pulse length is rounded to a multiple of the clock
    period; frames follow the rounded length.
    """
    calib = params if calib is None else calib
    d = spec.d

    def rnd(tau):
        return 0.0 if clock is None else float(layers.pulse_rounding(tau, clock)) - tau

    def rotation(theta, phi):
        ef1, _, ef2 = layers.composite_pulses(theta, phi, params, space, errors)
        t_ge = theta / (2.0 * params.eps_ge) + errors.tau_ge_offset
        err = replace(errors, tau_ge_offset=errors.tau_ge_offset + rnd(t_ge))
        ge = layers.layer_hamiltonian(LayerKind.GE, {"theta": theta, "phi": phi}, params, space, errors=err)
        # e-f pulses carry no frame, so only their length changes
        return [(ef1[0], ef1[1], ef1[2] + rnd(ef1[2])), ge, (ef2[0], ef2[1], ef2[2] + rnd(ef2[2]))]

    out = []
    for lp in spec.layers:
        out += rotation(lp.theta, lp.phi_q)
        t_sb = float(layers.jc_pulse_duration(lp.delta, calib, d)) + errors.tau_sb_offset
        err = replace(errors, tau_sb_offset=errors.tau_sb_offset + rnd(t_sb))
        out.append(layers.layer_hamiltonian(LayerKind.JC, {"phi_sb": lp.phi_sb, "delta": lp.delta}, params,
                                            space, calib=calib, errors=err))
    if spec.final_rotation is not None:
        out += rotation(spec.final_rotation.theta, spec.final_rotation.phi_q)
    return out


def circuit_channel(spec: CircuitSpec, params: SystemParams, noise: NoiseModel,
                    space: SpaceDescriptor | None = None, *, calib: SystemParams | None = None,
                    errors: PulseErrors = NO_ERRORS, clock: float | None = None) -> np.ndarray:
    """Time-ordered product of pulse propagators (boundary level included by default).

    ``params`` drives the evolution, ``calib`` (default ``params``) sets the
    JC pulse lengths and carriers.
    """
    space = SpaceDescriptor(spec.d, include_boundary=True) if space is None else space
    if space.d != spec.d:
        raise ValueError("space and circuit dimensions differ")
    E = np.eye(space.dim**2, dtype=complex)
    for H, frame, tau in circuit_pulses(spec, params, space, calib=calib, errors=errors, clock=clock):
        E = _pulse_propagator(H, frame, tau, noise) @ E
    return E


def _isometry(d: int, dim: int) -> np.ndarray:
    """V: |j> -> |g, j>, j < d (q-major index of |g, j> is j)."""
    V = np.zeros((dim, d))
    V[np.arange(d), np.arange(d)] = 1.0
    return V


def restrict_channel(E: np.ndarray, d: int) -> np.ndarray:
    """Qudit channel rho -> V^dag E(V rho V^dag) V on the |g, n < d> subspace.

    Population leaving the subspace is lost, so the result is trace
    decreasing in general.
    """
    n2 = E.shape[0]
    dim = int(round(math.sqrt(n2)))
    if dim * dim != n2 or E.shape != (n2, n2):
        raise ValueError("transfer matrix must be square with a square dimension")
    V = _isometry(d, dim)
    emb = np.kron(V.conj(), V)  # vec(V rho V^dag)
    proj = np.kron(V.T, V.conj().T)  # vec(V^dag X V)
    return proj @ E @ emb


@dataclass(frozen=True)
class ChoiMatrix:
    matrix: np.ndarray
    trace: float

    @property
    def normalized(self) -> np.ndarray:
        return self.matrix / self.trace


def choi(E_sub: np.ndarray) -> ChoiMatrix:
    """J = (E kron I)(|Phi><Phi|) with |Phi> = d^{-1/2} sum_i |i>|i> (system index first)."""
    n2 = E_sub.shape[0]
    d = int(round(math.sqrt(n2)))
    # E(|i><j|) is column i + j d of E_sub, reshaped column-major
    T = E_sub.reshape(d, d, d, d, order="F")  # T[a, b, i, j] = <a|E(|i><j|)|b>
    J = np.transpose(T, (0, 2, 1, 3)).reshape(d * d, d * d) / d
    J = 0.5 * (J + J.conj().T)
    return ChoiMatrix(J, float(np.real(np.trace(J))))


def _target_choi(U: np.ndarray) -> np.ndarray:
    d = U.shape[0]
    phi = U.reshape(-1) / math.sqrt(d)  # sum_i U|i> |i>, system index first
    return np.outer(phi, phi.conj())


def process_fidelity(E: np.ndarray, target, postselect: bool = False):
    """(F, acceptance probability) of a channel against a unitary target.

    ``E`` is either the restricted d^2 x d^2 channel or a full-space transfer
    matrix, which is restricted first. With ``postselect`` the Choi matrix is
    normalised by its trace (conditioning on the ancilla ending in |g>);
    otherwise lost population counts as infidelity.
    """
    U = np.asarray(getattr(target, "matrix", getattr(target, "unitary", target)), complex)
    d = U.shape[0]
    if E.shape[0] != d * d:
        E = restrict_channel(E, d)
    J = choi(E)
    p = J.trace
    F = float(np.real(np.trace(J.matrix @ _target_choi(U))))
    if postselect:
        if p <= 0:
            raise ZeroDivisionError("zero acceptance probability")
        F /= p
    return F, p


def trace_functional(n: int) -> np.ndarray:
    """<<1| such that <<1| vec(rho) = Tr rho."""
    return np.eye(n).reshape(-1, order="F")


@dataclass
class ErrorBudget:
    """Per-channel infidelities for one circuit."""

    coherent: dict  # postselect -> zero-noise infidelity
    channels: dict  # (name, postselect) -> (infidelity, acceptance)
    total: dict  # postselect -> (infidelity, acceptance) with all channels on
    groups: dict  # (group, postselect) -> summed infidelity in excess of coherent

    def largest_group(self, postselect: bool) -> str:
        vals = {g: v for (g, ps), v in self.groups.items() if ps == postselect}
        return max(vals, key=vals.get)

    def non_additivity(self, postselect: bool) -> float:
        """Joint excess infidelity minus the sum of single-channel excesses."""
        coh = self.coherent[postselect]
        s = sum(v[0] - coh for (n, ps), v in self.channels.items() if ps == postselect)
        return (self.total[postselect][0] - coh) - s


def error_budget(spec: CircuitSpec, target, noise: NoiseModel, params: SystemParams, *,
                 space: SpaceDescriptor | None = None, calib: SystemParams | None = None,
                 errors: PulseErrors = NO_ERRORS, clock: float | None = None) -> ErrorBudget:
    """Each jump operator alone (others zeroed), with and without post-selection.

    The coherent entry is the zero-noise infidelity of the same simulation.
    """

    def run(nm):
        E = restrict_channel(circuit_channel(spec, params, nm, space, calib=calib, errors=errors, clock=clock),
                             spec.d)
        return {ps: process_fidelity(E, target, ps) for ps in (False, True)}

    coh = run(noise.only())
    tot = run(noise)
    channels = {}
    for name in noise.names:
        r = run(noise.only(name))
        for ps in (False, True):
            channels[(name, ps)] = (1.0 - r[ps][0], r[ps][1])
    coherent = {ps: 1.0 - coh[ps][0] for ps in (False, True)}
    groups = {}
    for g, members in CHANNEL_GROUPS.items():
        for ps in (False, True):
            groups[(g, ps)] = sum(channels[(m, ps)][0] - coherent[ps] for m in members if (m, ps) in channels)
    total = {ps: (1.0 - tot[ps][0], tot[ps][1]) for ps in (False, True)}
    return ErrorBudget(coherent, channels, total, groups)


def write_budget_csv(path, budgets: dict) -> None:
    """CSV with columns gate, channel, postselected, infidelity, acceptance_probability."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gate", "channel", "postselected", "infidelity", "acceptance_probability"])
        for gate, b in budgets.items():
            for ps in (False, True):
                w.writerow([gate, "coherent", ps, f"{b.coherent[ps]:.10g}", ""])
                for (name, p), (inf, acc) in b.channels.items():
                    if p == ps:
                        w.writerow([gate, name, ps, f"{inf:.10g}", f"{acc:.10g}"])
                w.writerow([gate, "all", ps, f"{b.total[ps][0]:.10g}", f"{b.total[ps][1]:.10g}"])
