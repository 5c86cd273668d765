"""Process tomography in the generalized Pauli basis, fidelity conversions,
offset-phase and phase-gate corrections, a Fock-input fidelity proxy and joint
qubit-oscillator state reconstruction.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import sqrtm
from scipy.optimize import minimize_scalar

from . import channels
from .circuit import layer_unitaries
from .qsys import LEVELS, SpaceDescriptor, SystemParams, basis_index

PAULI_LABELS = ("I", "X", "Z", "X2", "Z2", "ZX", "Z2X", "ZX2", "Z2X2")


def _xz(d: int = 3):
    X = np.roll(np.eye(d), 1, axis=0)  # X|j> = |j+1>
    Z = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    return X, Z


def generalized_paulis(d: int = 3) -> list:
    """{I, X, Z, X^2, Z^2, ZX, Z^2X, ZX^2, Z^2X^2} for d = 3."""
    if d != 3:
        raise ValueError("the ordered generalized Pauli basis is defined for d = 3")
    X, Z = _xz(3)
    X2, Z2 = X @ X, Z @ Z
    return [np.eye(3, dtype=complex), X.astype(complex), Z, X2.astype(complex), Z2,
            Z @ X, Z2 @ X, Z @ X2, Z2 @ X2]


def tomo_input_states(d: int = 3) -> list:
    """Nine pure input states: Fock states and the six two-level superpositions."""
    if d != 3:
        raise ValueError("the tomographic input set is defined for d = 3")
    e = np.eye(3)
    s = 1 / math.sqrt(2)
    kets = [e[0], e[1], e[2],
            s * (e[0] + e[1]), s * (e[0] + 1j * e[1]),
            s * (e[1] + e[2]), s * (e[1] + 1j * e[2]),
            s * (e[0] + e[2]), s * (e[0] + 1j * e[2])]
    return [np.outer(k, np.conj(k)) for k in kets]


@dataclass
class ChiMatrix:
    chi: np.ndarray
    labels: tuple = PAULI_LABELS
    psd_projected: bool = False

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.chi)))

    def to_json(self) -> dict:
        return {"basis": list(self.labels), "real": self.chi.real.tolist(), "imag": self.chi.imag.tolist(),
                "psd_projected": self.psd_projected}

    @classmethod
    def from_json(cls, data: dict) -> "ChiMatrix":
        chi = np.array(data["real"]) + 1j * np.array(data["imag"])
        return cls(chi, tuple(data["basis"]), bool(data.get("psd_projected", False)))


def _vec(m):
    return np.asarray(m).reshape(-1, order="F")


def reconstruct_chi(inputs, outputs, basis=None, *, psd: bool = False) -> ChiMatrix:
    """Least-squares chi with E(rho_j) = sum_mn chi_mn E_m rho_j E_n^dag.

    ``psd`` clips negative eigenvalues of the Hermitised result.
    """
    basis = generalized_paulis(3) if basis is None else basis
    if len(inputs) != len(outputs):
        raise ValueError("need one output per input state")
    A_in = np.stack([_vec(r) for r in inputs], axis=1)
    if np.linalg.matrix_rank(A_in, tol=1e-9) < len(basis):
        raise ValueError("input states are not tomographically complete")
    m = len(basis)
    rows = []
    for rho in inputs:
        cols = [_vec(Em @ rho @ En.conj().T) for Em in basis for En in basis]
        rows.append(np.stack(cols, axis=1))
    A = np.concatenate(rows, axis=0)
    b = np.concatenate([_vec(o) for o in outputs])
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    chi = x.reshape(m, m)
    chi = 0.5 * (chi + chi.conj().T)
    if psd:
        w, v = np.linalg.eigh(chi)
        chi = (v * np.clip(w, 0, None)) @ v.conj().T
    return ChiMatrix(chi, PAULI_LABELS[:m] if m == 9 else tuple(map(str, range(m))), psd)


def chi_of_channel(E_sub: np.ndarray, basis=None) -> ChiMatrix:
    """Exact chi of a d^2 x d^2 transfer matrix by projection onto conj(E_n) kron E_m.

    Those operators are orthogonal with norm^2 d^2 for a unitary-orthogonal basis.
    """
    basis = generalized_paulis(3) if basis is None else basis
    d = basis[0].shape[0]
    m = len(basis)
    chi = np.empty((m, m), complex)
    for i, Em in enumerate(basis):
        for j, En in enumerate(basis):
            chi[i, j] = np.vdot(np.kron(En.conj(), Em), E_sub) / d**2
    return ChiMatrix(chi, PAULI_LABELS[:m] if m == 9 else tuple(map(str, range(m))))


def chi_of_unitary(U, basis=None) -> ChiMatrix:
    basis = generalized_paulis(3) if basis is None else basis
    c = np.array([np.trace(E.conj().T @ U) for E in basis]) / U.shape[0]
    return ChiMatrix(np.outer(c, c.conj()))


def chi_fidelity(chi_exp, chi_ideal) -> float:
    """Tr(chi_exp chi_ideal)."""
    a = getattr(chi_exp, "chi", chi_exp)
    b = getattr(chi_ideal, "chi", chi_ideal)
    return float(np.real(np.trace(a @ b)))


def gate_fidelity_from_process(F_proc: float, d: int) -> float:
    """Average gate fidelity (F_proc d + 1) / (d + 1)."""
    return (F_proc * d + 1.0) / (d + 1.0)


def state_fidelity(rho, sigma) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    s = sqrtm(rho)
    return float(np.real(np.trace(sqrtm(s @ sigma @ s))) ** 2)


def fock_avg_fidelity_proxy(gate, measured_pairs) -> float:
    """Mean fidelity between each measured output and the gate applied to its measured input."""
    U = np.asarray(getattr(gate, "matrix", gate), complex)
    if not measured_pairs:
        raise ValueError("no measured pairs")
    return float(np.mean([state_fidelity(out, U @ rin @ U.conj().T) for rin, out in measured_pairs]))


# ---------------------------------------------------------------------------
# phase corrections
# ---------------------------------------------------------------------------


def _phase_diag(phi, d):
    return np.diag(np.exp(1j * phi * np.arange(d)))


def _fidelity_vs(E_or_U, V) -> float:
    M = np.asarray(E_or_U)
    if M.shape == V.shape:
        return float(abs(np.trace(V.conj().T @ M)) ** 2 / V.shape[0] ** 2)
    return channels.process_fidelity(M, V)[0]


def _maximize_phase(f, n_grid: int = 64):
    """Grid search over [-pi, pi) then golden-section refinement around the best point."""
    grid = -math.pi + 2 * math.pi * np.arange(n_grid) / n_grid
    vals = np.array([f(p) for p in grid])
    k = int(np.argmax(vals))
    h = 2 * math.pi / n_grid
    res = minimize_scalar(lambda p: -f(p), bracket=(grid[k] - h, grid[k], grid[k] + h), method="golden",
                          tol=1e-10)
    phi, val = float(res.x), -float(res.fun)
    if val < vals[k]:
        phi, val = float(grid[k]), float(vals[k])
    return (phi + math.pi) % (2 * math.pi) - math.pi, val


def offset_phase_unitary(phi1, phi2, phi3, d: int) -> np.ndarray:
    """exp(-i phi1 |g><g| + i phi2 |f><f| + i (phi2 - phi3) a^dag a) on the |g, n < d> subspace."""
    return np.exp(-1j * phi1) * _phase_diag(phi2 - phi3, d)


def optimize_offset_phases(E_or_U, target, n_grid: int = 64):
    """Best (phi1, phi2, phi3, fidelity) over offset-phase frames of the target.

    On the |g> subspace the frame acts as a global phase times diag(e^{i b n})
    with b = phi2 - phi3, and the reference gate becomes R(b) U R(b)^dag, so
    only b is searched; it is reported as phi2 with phi1 = phi3 = 0.
    """
    U = np.asarray(getattr(target, "matrix", target), complex)
    d = U.shape[0]

    def f(b):
        R = _phase_diag(b, d)
        return _fidelity_vs(E_or_U, R @ U @ R.conj().T)

    f0 = f(0.0)
    b, val = _maximize_phase(f, n_grid)
    if val < f0:
        b, val = 0.0, f0
    return 0.0, b, 0.0, val


def phase_gate_correction(E_or_U, target, n_grid: int = 64):
    """(phi, F) maximising the fidelity against R(phi) U_target, R(phi) = sum_j e^{i j phi}|j><j|."""
    U = np.asarray(getattr(target, "matrix", target), complex)
    d = U.shape[0]

    def f(p):
        return _fidelity_vs(E_or_U, _phase_diag(p, d) @ U)

    f0 = f(0.0)
    phi, val = _maximize_phase(f, n_grid)
    if val < f0:
        phi, val = 0.0, f0
    return phi, val


# ---------------------------------------------------------------------------
# joint qubit-oscillator tomography
# ---------------------------------------------------------------------------

# qubit rotations in the {|g>, |f>} basis
_SX = np.array([[0, 1], [1, 0]], complex)
_SY = np.array([[0, -1j], [1j, 0]], complex)


def _rot(sigma, angle):
    return math.cos(angle / 2) * np.eye(2) - 1j * math.sin(angle / 2) * sigma


JOINT_ROTATIONS = (np.eye(2, dtype=complex), _rot(_SX, math.pi), _rot(_SX, math.pi / 2), _rot(_SY, math.pi / 2))


@dataclass
class JointState:
    rho: np.ndarray  # 2d x 2d, ordering qubit (g, f) x oscillator
    nonpsd: bool = False

    @property
    def d(self) -> int:
        return self.rho.shape[0] // 2

    def to_json(self) -> dict:
        return {"basis": "qubit(g,f) x fock", "real": self.rho.real.tolist(), "imag": self.rho.imag.tolist(),
                "nonpsd": self.nonpsd}


def joint_blocks(rho):
    """(S, P, Q) with rho = [[S, Q], [Q^dag, P]]."""
    r = np.asarray(getattr(rho, "rho", rho))
    d = r.shape[0] // 2
    return r[:d, :d], r[d:, d:], r[:d, d:]


def conditional_measurements(rho, rotations=JOINT_ROTATIONS):
    """Post-selected oscillator states and |g> probabilities after each qubit rotation."""
    r = np.asarray(getattr(rho, "rho", rho))
    d = r.shape[0] // 2
    out = []
    for Uq in rotations:
        U = np.kron(Uq, np.eye(d))
        s = (U @ r @ U.conj().T)[:d, :d]
        p = float(np.real(np.trace(s)))
        out.append((s / p if p > 0 else np.zeros_like(s), p))
    return out


def reconstruct_joint(conditional_states) -> JointState:
    """Assemble rho from the four (rho_j, P_j) for rotations {I, pi_x, (pi/2)_x, (pi/2)_y}.

    With (pi/2)_x = exp(-i pi sigma_x / 4) and (pi/2)_y = exp(-i pi sigma_y / 4),
    Q = -P4 rho4 - i P3 rho3 + (1 + i)/2 (S + P).
    """
    if len(conditional_states) != 4:
        raise ValueError("need four conditional states")
    for _, p in conditional_states:
        if not 0.0 <= p <= 1.0 + 1e-12:
            raise ValueError("probabilities must lie in [0, 1]")
    (r1, p1), (r2, p2), (r3, p3), (r4, p4) = [(np.asarray(r), p) for r, p in conditional_states]
    S = p1 * r1
    P = p2 * r2
    Q = -p4 * r4 - 1j * p3 * r3 + 0.5 * (1 + 1j) * (S + P)
    rho = np.block([[S, Q], [Q.conj().T, P]])
    rho = 0.5 * (rho + rho.conj().T)
    return JointState(rho, bool(np.linalg.eigvalsh(rho).min() < -1e-3))


# ---------------------------------------------------------------------------
# layer-resolved populations
# ---------------------------------------------------------------------------


def layerwise_populations(spec, params: SystemParams, initial_states, space: SpaceDescriptor | None = None):
    """Rows (initial, layer, level, n, population) after each circuit prefix.

    ``initial_states`` maps a label to a state vector on the full space or
    to a Fock number (ancilla in |g>). Layer k is after k (rotation, JC)
    pairs; a trailing rotation adds a final layer L + 1.
    """
    space = SpaceDescriptor(spec.d, include_boundary=True) if space is None else space
    mats = layer_unitaries(spec, params, space)
    steps = [mats[2 * i + 1] @ mats[2 * i] for i in range(spec.depth)]
    if spec.final_rotation is not None:
        steps.append(mats[-1])
    rows = []
    N = space.n_levels
    for label, init in initial_states.items():
        if np.ndim(init) == 0:
            psi = np.zeros(space.dim, complex)
            psi[basis_index("g", int(init), space)] = 1.0
        else:
            psi = np.asarray(init, complex)
        for k in range(len(steps) + 1):
            if k:
                psi = steps[k - 1] @ psi
            pop = np.abs(psi) ** 2
            for q, level in enumerate(LEVELS):
                for n in range(N):
                    rows.append((label, k, level, n, float(pop[q * N + n])))
    return rows


def write_populations_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["initial", "layer", "level", "n", "population"])
        for r in rows:
            w.writerow([r[0], r[1], r[2], r[3], f"{r[4]:.10g}"])


def save_chi(path, chi: ChiMatrix) -> None:
    with open(path, "w") as fh:
        json.dump(chi.to_json(), fh, indent=1)
