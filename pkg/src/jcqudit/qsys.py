"""Joint transmon-qutrit / oscillator Hilbert space and physical parameters.

Units used throughout the package: angular frequencies in rad/us, times in us,
phases in radians. Use :func:`mhz` / :func:`khz` to convert from cyclic
frequencies.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

LEVELS = ("g", "e", "f")
_LEVEL_INDEX = {q: i for i, q in enumerate(LEVELS)}

TWO_PI = 2.0 * math.pi


def mhz(x: float) -> float:
    """Cyclic frequency in MHz -> angular frequency in rad/us."""
    return TWO_PI * x


def khz(x: float) -> float:
    """Cyclic frequency in kHz -> angular frequency in rad/us."""
    return TWO_PI * x * 1e-3


def to_mhz(w: float) -> float:
    return w / TWO_PI


# Frequency-valued fields of SystemParams (converted on parameter-file load).
FREQUENCY_FIELDS = (
    "chi_e",
    "chi_f",
    "eps_ge",
    "eps_ef",
    "eps_sb",
    "delta_f0g1",
    "delta_e_stark",
    "delta_osc_stark",
    "self_kerr",
    "anharmonicity",
)
FLAG_FIELDS = ("include_osc_stark", "include_self_kerr", "include_transmon_drive_stark")


@dataclass(frozen=True)
class SystemParams:
    """Hamiltonian parameters of the qutrit-oscillator model (rad/us).

    ``delta_f0g1`` is the driven Stark shift of the f0-g1 transition
    (Delta_f - Delta_osc); the |f> Stark shift itself is
    ``delta_f0g1 + delta_osc_stark``.

    The three flags select model corrections that the default optimizer
    model leaves out: the oscillator Stark shift of the sideband drive, the
    oscillator self-Kerr, and the Stark shifts caused by the transmon drives.
    """

    chi_e: float
    chi_f: float
    eps_ge: float
    eps_ef: float
    eps_sb: float
    delta_f0g1: float
    delta_e_stark: float
    delta_osc_stark: float
    self_kerr: float
    anharmonicity: float
    include_osc_stark: bool = False
    include_self_kerr: bool = False
    include_transmon_drive_stark: bool = False

    def __post_init__(self):
        for name in FREQUENCY_FIELDS:
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
        for name in ("eps_ge", "eps_ef", "eps_sb"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def delta_f_stark(self) -> float:
        """Driven Stark shift of |f> (Delta_f)."""
        return self.delta_f0g1 + self.delta_osc_stark

    @property
    def osc_stark(self) -> float:
        """Oscillator Stark shift as seen by the model (0 unless flagged)."""
        return self.delta_osc_stark if self.include_osc_stark else 0.0

    @property
    def kerr(self) -> float:
        """Self-Kerr as seen by the model (0 unless flagged)."""
        return self.self_kerr if self.include_self_kerr else 0.0

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    def with_chi_ratio(self, ratio: float) -> "SystemParams":
        """Same parameters with chi_f = ratio * eps_sb (chi_e kept at chi_f/2)."""
        chi_f = ratio * self.eps_sb
        return self.replace(chi_f=chi_f, chi_e=chi_f / 2.0)

    def to_dict(self, units: str = "MHz") -> dict:
        if units not in ("MHz", "rad/us"):
            raise ValueError(f"unknown units {units!r}")
        out: dict = {"units": units}
        for name in FREQUENCY_FIELDS:
            v = getattr(self, name)
            out[name] = to_mhz(v) if units == "MHz" else v
        for name in FLAG_FIELDS:
            out[name] = getattr(self, name)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SystemParams":
        """Build from a mapping; ``units`` is mandatory ("MHz" or "rad/us").

        Missing frequency keys fall back to :func:`default_params`.
        """
        if "units" not in data:
            raise ValueError("parameter file must specify 'units'")
        units = data["units"]
        if units not in ("MHz", "rad/us"):
            raise ValueError(f"unsupported units {units!r}; use 'MHz' or 'rad/us'")
        unknown = set(data) - set(FREQUENCY_FIELDS) - set(FLAG_FIELDS) - {"units"}
        if unknown:
            raise ValueError(f"unknown parameter keys: {sorted(unknown)}")
        base = default_params()
        kw = {}
        for name in FREQUENCY_FIELDS:
            if name in data:
                v = float(data[name])
                kw[name] = mhz(v) if units == "MHz" else v
        for name in FLAG_FIELDS:
            if name in data:
                kw[name] = bool(data[name])
        return base.replace(**kw)


def default_params() -> SystemParams:
    """Reference device parameters.

    Provenance of each value:

    * chi_f = 2pi x 350 kHz (dispersive shift of |f>, reported as ~350 kHz).
    * chi_e = chi_f / 2 (first-order relation chi_f = 2 chi_e; overridable).
    * eps_sb = 2pi x 0.70 MHz, from the reported |chi_f / g_JC| ~ 0.5 with
      g_JC identified with the sideband rate eps_sb.
    * delta_f0g1 = 2pi x 14 MHz (driven Stark shift of the f0-g1 line).
    * delta_osc_stark = 2pi x 11 kHz (oscillator Stark shift).
    * delta_e_stark = Delta_f / 2 (first-order relation Delta_f = 2 Delta_e).
    * self_kerr = 2pi x 50 Hz.
    * eps_ge = eps_ef = 2pi x 5 MHz: not reported; chosen so a pi pulse lasts
      50 ns, a typical square transmon pulse.
    * anharmonicity = -2pi x 111.4 MHz: magnitude inferred from
      Delta_osc ~ chi_e Delta_f0g1 / (2 alpha); sign of a transmon.
    """
    chi_f = mhz(0.35)
    delta_f0g1 = mhz(14.0)
    delta_osc = khz(11.0)
    chi_e = chi_f / 2.0
    return SystemParams(
        chi_e=chi_e,
        chi_f=chi_f,
        eps_ge=mhz(5.0),
        eps_ef=mhz(5.0),
        eps_sb=mhz(0.70),
        delta_f0g1=delta_f0g1,
        delta_e_stark=(delta_f0g1 + delta_osc) / 2.0,
        delta_osc_stark=delta_osc,
        self_kerr=khz(50e-3),
        anharmonicity=-chi_e * delta_f0g1 / (2.0 * delta_osc),
    )


def load_params(path: str | Path) -> SystemParams:
    """Read a JSON or TOML parameter file (frequencies in MHz by default)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        import tomli

        data = tomli.loads(text)
    else:
        data = json.loads(text)
    if "params" in data and isinstance(data["params"], dict):
        data = data["params"]
    return SystemParams.from_dict(data)


def save_params(params: SystemParams, path: str | Path, units: str = "MHz") -> None:
    Path(path).write_text(json.dumps(params.to_dict(units), indent=2))


@dataclass(frozen=True)
class SpaceDescriptor:
    """Truncated joint space {g,e,f} x {|0>..|N-1>}.

    N = d without the boundary Fock level, N = d + 1 with it. Basis ordering
    is transmon-level major: index = q * N + n.
    """

    d: int
    include_boundary: bool = False
    n_levels: int = field(init=False)

    def __post_init__(self):
        if not isinstance(self.d, int) or self.d < 2:
            raise ValueError(f"qudit dimension must be an integer >= 2, got {self.d!r}")
        object.__setattr__(self, "n_levels", self.d + 1 if self.include_boundary else self.d)

    @property
    def dim(self) -> int:
        return 3 * self.n_levels

    def g_indices(self) -> list[int]:
        """Indices of the computational states |g,0>..|g,d-1>."""
        return [basis_index("g", n, self) for n in range(self.d)]


def basis_index(q: str | int, n: int, space: SpaceDescriptor) -> int:
    """Flat index of |q, n> in ``space`` (q-major ordering)."""
    if isinstance(q, str):
        if q not in _LEVEL_INDEX:
            raise IndexError(f"unknown transmon level {q!r}")
        qi = _LEVEL_INDEX[q]
    else:
        qi = int(q)
        if not 0 <= qi < 3:
            raise IndexError(f"transmon level index {q!r} out of range")
    if not 0 <= n < space.n_levels:
        raise IndexError(f"photon number {n} outside [0, {space.n_levels})")
    return qi * space.n_levels + n
