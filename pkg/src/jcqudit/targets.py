"""Target qudit gates: Paulis, Fourier, phase gates, Givens rotations, Haar
random unitaries and the qutrit Clifford group."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .qsys import SpaceDescriptor

_DEC = 9  # rounding digits for hashing canonical matrices


@dataclass(frozen=True)
class QuditGate:
    """A d x d unitary with a label and, for Cliffords, word metadata."""

    matrix: np.ndarray
    label: str = ""
    word: str = ""  # minimal product in H and S (rightmost factor applied first)

    def __post_init__(self):
        m = np.asarray(self.matrix, complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("gate matrix must be square")
        if np.abs(m.conj().T @ m - np.eye(len(m))).max() > 1e-12:
            raise ValueError(f"gate {self.label!r} is not unitary")
        object.__setattr__(self, "matrix", m)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def word_length(self) -> int:
        return len(self.word)

    @property
    def h_count(self) -> int:
        return self.word.count("H")

    @property
    def s_count(self) -> int:
        return self.word.count("S")


def shift_gate(d: int) -> QuditGate:
    """X|j> = |j+1 mod d>."""
    if d < 2:
        raise ValueError("d must be >= 2")
    return QuditGate(np.roll(np.eye(d), 1, axis=0), "X")


def clock_gate(d: int) -> QuditGate:
    """Z|j> = omega^j |j>."""
    w = np.exp(2j * np.pi / d)
    return QuditGate(np.diag(w ** np.arange(d)), "Z")


def fourier_gate(d: int) -> QuditGate:
    """H = d^{-1/2} sum_jk omega^{jk} |j><k|."""
    j = np.arange(d)
    w = np.exp(2j * np.pi / d)
    return QuditGate(w ** np.outer(j, j) / np.sqrt(d), "H")


def s_gate() -> QuditGate:
    """Qutrit quadratic phase gate diag(1, omega, 1)."""
    w = np.exp(2j * np.pi / 3)
    return QuditGate(np.diag([1.0, w, 1.0]), "S")


def t_gate() -> QuditGate:
    """Qutrit T gate diag(1, xi, xi^8) with xi = exp(2 pi i / 9)."""
    xi = np.exp(2j * np.pi / 9)
    return QuditGate(np.diag([1.0, xi, xi**8]), "T")


def givens_gate(j: int, k: int, theta: float = np.pi / 2, d: int = 3) -> QuditGate:
    """Real rotation exp(-i theta/2 sigma_y) in the (j, k) plane.

    |j> -> cos(theta/2)|j> + sin(theta/2)|k>, other levels untouched.
    """
    if not (0 <= j < d and 0 <= k < d) or j == k:
        raise ValueError("Givens indices must be distinct levels of the qudit")
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    m = np.eye(d, dtype=complex)
    m[j, j] = c
    m[k, k] = c
    m[k, j] = s
    m[j, k] = -s
    return QuditGate(m, f"G{j}{k}({theta:.4g})")


def haar_random(d: int, seed) -> QuditGate:
    """Haar-distributed unitary: QR of a complex Ginibre matrix with phase fixing."""
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diagonal(r) / np.abs(np.diagonal(r))
    return QuditGate(q * ph[None, :], f"haar{d}")


def power(g: QuditGate, k: int, label: str | None = None) -> QuditGate:
    return QuditGate(np.linalg.matrix_power(g.matrix, k), label or f"{g.label}^{k}")


def main_gate_set() -> list[QuditGate]:
    """The eight qutrit gates benchmarked with process tomography."""
    return [
        QuditGate(shift_gate(3).matrix, "X"),
        QuditGate(power(shift_gate(3), 2).matrix, "X2"),
        fourier_gate(3),
        s_gate(),
        t_gate(),
        QuditGate(givens_gate(0, 1).matrix, "G01"),
        QuditGate(givens_gate(0, 2).matrix, "G02"),
        QuditGate(givens_gate(1, 2).matrix, "G12"),
    ]


def named_gate(name: str, d: int) -> QuditGate:
    """Look up a gate by CLI name."""
    name = name.lower()
    table = {
        "shift": lambda: shift_gate(d),
        "x": lambda: shift_gate(d),
        "clock": lambda: clock_gate(d),
        "z": lambda: clock_gate(d),
        "hadamard": lambda: fourier_gate(d),
        "fourier": lambda: fourier_gate(d),
        "h": lambda: fourier_gate(d),
        "identity": lambda: QuditGate(np.eye(d), "I"),
        "s": s_gate,
        "t": t_gate,
    }
    if name.startswith("haar"):
        seed = int(name[4:] or 0)
        return haar_random(d, seed)
    if name not in table:
        raise KeyError(f"unknown gate {name!r}")
    return table[name]()


# ---------------------------------------------------------------------------
# Clifford group
# ---------------------------------------------------------------------------


def canonicalize(m: np.ndarray) -> np.ndarray:
    """Remove the global phase: first nonzero entry (column-major) made real positive."""
    m = np.asarray(m, complex)
    flat = m.T.ravel()
    k = int(np.argmax(np.abs(flat) > 1e-9))
    return m * (np.abs(flat[k]) / flat[k])


def _key(m: np.ndarray) -> bytes:
    c = canonicalize(m)
    r = np.round(np.concatenate([c.real.ravel(), c.imag.ravel()]), _DEC) + 0.0
    return r.tobytes()


def enumerate_qutrit_cliffords(max_size: int = 10000) -> list[QuditGate]:
    """Breadth-first closure of <H, S> modulo global phase (216 elements).

    BFS order guarantees each element's recorded word is of minimal length.
    """
    gens = {"H": fourier_gate(3).matrix, "S": s_gate().matrix}
    start = np.eye(3, dtype=complex)
    seen = {_key(start): ""}
    mats = [start]
    words = [""]
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for name, g in gens.items():
            nm = canonicalize(g @ mats[i])
            k = _key(nm)
            if k not in seen:
                seen[k] = name + words[i]
                mats.append(nm)
                words.append(name + words[i])
                queue.append(len(mats) - 1)
                if len(mats) > max_size:
                    raise RuntimeError("Clifford closure did not terminate")
    return [QuditGate(m, f"C{i:03d}", w) for i, (m, w) in enumerate(zip(mats, words))]


def clifford_index(cliffords) -> dict:
    """Map canonical key -> position, for membership tests."""
    return {_key(c.matrix): i for i, c in enumerate(cliffords)}


def is_pauli(m: np.ndarray, d: int = 3) -> bool:
    """Whether m equals X^a Z^b up to a global phase."""
    X, Z = shift_gate(d).matrix, clock_gate(d).matrix
    target = _key(m)
    for a in range(d):
        for b in range(d):
            if _key(np.linalg.matrix_power(X, a) @ np.linalg.matrix_power(Z, b)) == target:
                return True
    return False


# ---------------------------------------------------------------------------
# embedding and export
# ---------------------------------------------------------------------------


def embed_target(g: QuditGate, space: SpaceDescriptor):
    """Full-space unitary with g on |g,0..d-1> (identity elsewhere) and the g-manifold projector."""
    if g.d != space.d:
        raise ValueError("gate and space dimensions differ")
    idx = space.g_indices()
    U = np.eye(space.dim, dtype=complex)
    U[np.ix_(idx, idx)] = g.matrix
    P = np.zeros((space.dim, space.dim))
    P[idx, idx] = 1.0
    return U, P


def export_gates(gates, path) -> None:
    """JSON manifest of labels, words and matrices (real/imag arrays)."""
    data = [
        {
            "label": g.label,
            "d": g.d,
            "word": g.word,
            "real": g.matrix.real.tolist(),
            "imag": g.matrix.imag.tolist(),
        }
        for g in gates
    ]
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)
