"""Experiment harness and command-line entry point.

Every run writes CSV/JSON data plus a ``manifest.json`` (inputs hash,
package versions, output list) into its output directory. Results depend
only on (config, seed); wall-clock times are kept out of the data files and
recorded in the manifest.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import channels, tomography
from .circuit import CircuitSpec, TargetGate, spec_fidelity
from .layers import FPGA_CLOCK_US, PulseErrors, pulse_rounding
from .optimizer import (DepthCapExceeded, OptimizerConfig, bracket_depth_search, depth_scaling_fit,
                        multistart_optimize)
from .qsys import SpaceDescriptor, SystemParams, default_params, load_params, mhz
from .targets import (QuditGate, enumerate_qutrit_cliffords, haar_random, main_gate_set, named_gate,
                      shift_gate)

__all__ = ["pulse_rounding", "FPGA_CLOCK_US"]

MODES = {"detuned": True, "fixed": False}


class ConfigError(ValueError):
    """Invalid user configuration (maps to exit code 2)."""


def as_target(g: QuditGate) -> TargetGate:
    return TargetGate(g.matrix, g.label)


# ---------------------------------------------------------------------------
# output plumbing
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


class Writer:
    """Single writer per run: files go to ``name.partial`` and are renamed on success."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self._pending: list[Path] = []

    def path(self, name) -> Path:
        p = self.out / (name + ".partial")
        self._pending.append(p)
        self.files.append(name)
        return p

    def csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])

    def json(self, name, data):
        with open(self.path(name), "w") as fh:
            json.dump(data, fh, indent=1, sort_keys=True, default=_json_default)

    def commit(self):
        for p in self._pending:
            if p.exists():
                os.replace(p, p.with_suffix(""))
        self._pending = []


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    raise TypeError(f"cannot serialise {type(o)}")


def _versions() -> dict:
    import numba
    import scipy

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__}


def write_manifest(out_dir, command: str, config: dict, files, wall_time: float, status: str) -> None:
    blob = json.dumps(config, sort_keys=True, default=_json_default).encode()
    manifest = {
        "command": command,
        "status": status,
        "config": config,
        "inputs_sha256": hashlib.sha256(blob).hexdigest(),
        "versions": _versions(),
        "outputs": list(files),
        "wall_time_s": round(wall_time, 3),
    }
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    with open(Path(out_dir) / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=_json_default)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


def run_optimize(gate: QuditGate, depth: int, config: OptimizerConfig, params: SystemParams) -> dict:
    """One multistart run; returns the summary (circuit included)."""
    res = multistart_optimize(as_target(gate), gate.d, depth, config, params)
    out = res.summary()
    out.pop("wall_time_s")
    out.update({"gate": gate.label, "d": gate.d, "depth": depth})
    return out


def _guess(prev: list, lower: int, d: int = 2) -> int:
    """Next-depth guess: extrapolate the last two depths, never below ``lower``.

    Without history the guess is d^2 / 2, a little under the typical depth.
    """
    if len(prev) >= 2:
        g = 2 * prev[-1] - prev[-2] + 1
    elif prev:
        g = prev[-1] + 2
    else:
        g = d * d // 2
    return max(lower, g)


@dataclass
class DepthScaling:
    rows: list = field(default_factory=list)  # (family, seed, d, mode, threshold, depth, best_fidelity)
    circuits: dict = field(default_factory=dict)  # (family, seed, d, mode, threshold) -> CircuitSpec

    def depths(self, family="shift", mode="detuned", threshold=0.99, seed=0) -> dict:
        return {r[2]: r[5] for r in self.rows
                if r[0] == family and r[3] == mode and r[4] == threshold and r[1] == seed and r[5] is not None}


def prefactor(depths: dict) -> float:
    """Least-squares a in L = a d^2 (fit through the origin)."""
    ds = np.array(sorted(depths), float)
    Ls = np.array([depths[int(k)] for k in sorted(depths)], float)
    return float(np.sum(Ls * ds**2) / np.sum(ds**4))


def run_depth_scaling(family: str, ds, thresholds, modes, config: OptimizerConfig, params: SystemParams, *,
                      seeds=(0,), max_depth: int = 80, log=None) -> DepthScaling:
    """Minimal depths per (seed, d, mode, threshold).

    ``family`` is ``shift`` (seeds ignored) or ``haar`` (one Haar target per
    seed and d). Depths at d-1 and at looser thresholds serve as lower
    bounds for the search at d.
    """
    out = DepthScaling()
    seeds = (0,) if family == "shift" else tuple(seeds)
    for seed in seeds:
        for mode in modes:
            cfg = config.replace(optimize_detuning=MODES[mode])
            found: dict = {}
            for thr in sorted(thresholds):
                prev = []
                for d in ds:
                    gate = shift_gate(d) if family == "shift" else haar_random(d, [seed, d])
                    lower = max([1] + [v for (t, dd), v in found.items() if t < thr and dd == d])
                    lower = max(lower, prev[-1] if prev else 1)
                    try:
                        rec = bracket_depth_search(as_target(gate), d, thr, cfg, params,
                                                   guess=_guess(prev, lower, d), max_depth=max_depth)
                    except DepthCapExceeded as exc:
                        out.rows.append((family, seed, d, mode, thr, None, max(exc.record.fidelities.values())))
                        exc.scaling = out
                        raise
                    found[(thr, d)] = rec.depth
                    prev.append(rec.depth)
                    res = rec.results[rec.depth]
                    out.rows.append((family, seed, d, mode, thr, rec.depth, res.best_fidelity))
                    out.circuits[(family, seed, d, mode, thr)] = res.best_params
                    if log:
                        log(f"{family} seed={seed} d={d} {mode} F>={thr}: depth {rec.depth} "
                            f"(probed {sorted(rec.fidelities)})")
    return out


def scaling_summary(sc: DepthScaling) -> dict:
    """Quadratic fits, d^2 prefactors and detuning prefactor ratios."""
    summary = {"fits": [], "ratios": []}
    keys = sorted({(r[0], r[1], r[3], r[4]) for r in sc.rows})
    for fam, seed, mode, thr in keys:
        dep = sc.depths(fam, mode, thr, seed)
        if len(dep) < 3:
            continue
        fit = depth_scaling_fit(dep)
        summary["fits"].append({"family": fam, "seed": seed, "mode": mode, "threshold": thr,
                                "a": fit.a, "b": fit.b, "c": fit.c, "r_squared": fit.r_squared,
                                "prefactor": prefactor(dep), "depths": {str(k): v for k, v in dep.items()}})
    for fam, seed, _, thr in keys:
        det = sc.depths(fam, "detuned", thr, seed)
        fix = sc.depths(fam, "fixed", thr, seed)
        common = sorted(set(det) & set(fix))
        if len(common) >= 2:
            entry = {"family": fam, "seed": seed, "threshold": thr,
                     "ratio": prefactor({k: fix[k] for k in common}) / prefactor({k: det[k] for k in common})}
            if entry not in summary["ratios"]:
                summary["ratios"].append(entry)
    # prefactor against log infidelity (linear regression, 95% interval on the slope)
    table = []
    for fam, mode in sorted({(f["family"], f["mode"]) for f in summary["fits"]}):
        pts = [(f["threshold"], f["prefactor"]) for f in summary["fits"]
               if f["family"] == fam and f["mode"] == mode]
        pts = sorted({p[0]: p for p in pts}.values())
        entry = {"family": fam, "mode": mode, "points": pts}
        if len(pts) >= 3:
            x = np.log10([1 - p[0] for p in pts])
            y = np.array([p[1] for p in pts])
            A = np.stack([x, np.ones_like(x)], axis=1)
            coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
            dof = len(x) - 2
            s2 = float(np.sum((y - A @ coef) ** 2) / dof) if dof > 0 else float("nan")
            cov = s2 * np.linalg.inv(A.T @ A)
            from scipy.stats import t as student_t

            half = float(student_t.ppf(0.975, dof) * math.sqrt(cov[0, 0])) if dof > 0 else float("nan")
            entry.update({"slope_per_decade": float(coef[0]), "intercept": float(coef[1]),
                          "slope_ci95": [float(coef[0]) - half, float(coef[0]) + half]})
        table.append(entry)
    summary["prefactor_vs_infidelity"] = table
    return summary


def run_chi_ratio_sweep(ds, ratios, threshold: float, config: OptimizerConfig, params: SystemParams, *,
                        max_depth: int = 80, log=None) -> list:
    """Rows (d, ratio, mode, depth, best_fidelity, beats_chi0) for shift gates.

    ``beats_chi0`` flags detuned depths strictly below the chi_f = 0 depth.
    """
    rows = []
    for d in ds:
        base = {}
        prev = {m: [] for m in MODES}
        for ratio in sorted(ratios):
            p = params.with_chi_ratio(ratio)
            for mode in MODES:
                cfg = config.replace(optimize_detuning=MODES[mode])
                rec = bracket_depth_search(as_target(shift_gate(d)), d, threshold, cfg, p,
                                           guess=prev[mode][-1] if prev[mode] else _guess([], 1, d),
                                           max_depth=max_depth)
                prev[mode].append(rec.depth)
                if ratio == 0:
                    base[mode] = rec.depth
                beats = mode == "detuned" and "detuned" in base and rec.depth < base["detuned"]
                rows.append((d, ratio, mode, rec.depth, rec.results[rec.depth].best_fidelity, beats))
                if log:
                    log(f"d={d} ratio={ratio} {mode}: depth {rec.depth}")
    return rows


def run_clifford_suite(threshold: float, config: OptimizerConfig, params: SystemParams, *,
                       modes=("detuned", "fixed"), guess: dict | None = None, max_depth: int = 40,
                       indices=None, log=None) -> list:
    """Rows (index, word, h_count, s_count, mode, depth, best_fidelity) for the 216 Cliffords."""
    cliffs = enumerate_qutrit_cliffords()
    guess = guess or {"detuned": 6, "fixed": 7}
    rows = []
    for i, c in enumerate(cliffs):
        if indices is not None and i not in indices:
            continue
        for mode in modes:
            cfg = config.replace(optimize_detuning=MODES[mode])
            rec = bracket_depth_search(as_target(c), 3, threshold, cfg, params, guess=guess[mode],
                                       max_depth=max_depth)
            rows.append((i, c.word or "I", c.h_count, c.s_count, mode, rec.depth,
                         rec.results[rec.depth].best_fidelity))
            if log:
                log(f"clifford {i} ({c.word or 'I'}) {mode}: depth {rec.depth}")
    return rows


def clifford_histogram(rows) -> list:
    depths = sorted({r[5] for r in rows})
    return [(L, sum(1 for r in rows if r[4] == "detuned" and r[5] == L),
             sum(1 for r in rows if r[4] == "fixed" and r[5] == L)) for L in depths]


def clifford_heatmap(rows) -> list:
    out = []
    for h, s in sorted({(r[2], r[3]) for r in rows}):
        for mode in MODES:
            sel = [r[5] for r in rows if r[2] == h and r[3] == s and r[4] == mode]
            if sel:
                out.append((h, s, mode, float(np.mean(sel)), len(sel)))
    return out


def stochastically_dominates(smaller, larger) -> bool:
    """Whether the empirical CDF of ``smaller`` lies everywhere at or above that of ``larger``."""
    smaller, larger = np.sort(smaller), np.sort(larger)
    for x in np.union1d(smaller, larger):
        if np.mean(smaller <= x) < np.mean(larger <= x) - 1e-12:
            return False
    return True


# ---------------------------------------------------------------------------
# robustness
# ---------------------------------------------------------------------------

SWEEP_PARAMETERS = ("chi_e", "chi_f", "f_ss", "f_osc_ss", "f_ge", "f_sb", "tau_ge", "tau_sb")
SWEEP_UNITS = {"chi_e": "MHz", "chi_f": "MHz", "f_ss": "MHz", "f_osc_ss": "MHz", "f_ge": "MHz",
               "f_sb": "MHz", "tau_ge": "us", "tau_sb": "us"}


@dataclass(frozen=True)
class SweepSpec:
    """Offsets of one parameter; frequencies in MHz (cyclic), durations in us."""

    parameter: str
    grid: tuple
    baseline: str = ""

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"unknown sweep parameter {self.parameter!r}")
        g = np.asarray(self.grid, float)
        if g.size == 0 or not np.all(np.isfinite(g)):
            raise ValueError("sweep grid must be finite and non-empty")
        if not np.any(g == 0.0):
            raise ValueError("sweep grid must contain 0")

    @property
    def unit(self) -> str:
        return SWEEP_UNITS[self.parameter]


def perturb(parameter: str, offset: float, params: SystemParams):
    """(evolution params, pulse errors) for a miscalibration; calibration stays at ``params``."""
    e = PulseErrors()
    p = params
    if parameter == "chi_e":
        p = params.replace(chi_e=params.chi_e + mhz(offset))
    elif parameter == "chi_f":
        p = params.replace(chi_f=params.chi_f + mhz(offset))
    elif parameter == "f_ss":
        # Delta_f moves f0-g1 and, through Delta_e = Delta_f / 2, the |e> shift
        p = params.replace(delta_f0g1=params.delta_f0g1 + mhz(offset),
                           delta_e_stark=params.delta_e_stark + mhz(offset) / 2)
    elif parameter == "f_osc_ss":
        p = params.replace(include_osc_stark=True, delta_osc_stark=params.osc_stark + mhz(offset))
    elif parameter == "f_ge":
        e = PulseErrors(ge_detuning=mhz(offset))
    elif parameter == "f_sb":
        e = PulseErrors(sb_detuning=mhz(offset))
    elif parameter == "tau_ge":
        e = PulseErrors(tau_ge_offset=offset)
    elif parameter == "tau_sb":
        e = PulseErrors(tau_sb_offset=offset)
    else:
        raise ValueError(f"unknown sweep parameter {parameter!r}")
    return p, e


def perturbed_fidelity(spec: CircuitSpec, target: TargetGate, parameter: str, offset: float,
                       params: SystemParams) -> float:
    """Noise-free fidelity on the boundary-including space under a miscalibration."""
    p, e = perturb(parameter, offset, params)
    return spec_fidelity(spec, p, target, SpaceDescriptor(spec.d, include_boundary=True), calib=params, errors=e)


def half_width(f, drop: float = 0.01, start: float = 1e-3, limit: float = 1e3) -> tuple:
    """(x_minus, x_plus, half-width) where f first falls by ``drop`` below f(0) on each side.

    Crossings are bracketed by doubling from ``start`` and refined by
    bisection; a side that never crosses within ``limit`` returns inf.
    """
    from scipy.optimize import brentq

    f0 = f(0.0)
    level = f0 - drop

    def side(sign):
        a, x = 0.0, start
        while x <= limit:
            if f(sign * x) < level:
                # first crossing on a coarse grid between a and x
                grid = np.linspace(a, x, 9)
                vals = [f(sign * g) for g in grid]
                k = next(i for i, v in enumerate(vals) if v < level)
                return sign * brentq(lambda t: f(sign * t) - level, grid[k - 1], grid[k], xtol=1e-12 * max(1, x))
            a, x = x, 2 * x
        return sign * math.inf

    lo, hi = side(-1.0), side(1.0)
    return lo, hi, 0.5 * (hi - lo)


HALF_WIDTH_START = {"MHz": 1e-3, "us": 1e-5}


def run_robustness(circuits: dict, sweeps, params: SystemParams) -> tuple:
    """Fidelity curves and 1%-drop half-widths.

    ``circuits`` maps (d, mode) -> CircuitSpec for shift gates. Returns
    (curve rows, half-width rows).
    """
    curves, widths = [], []
    for (d, mode), spec in sorted(circuits.items()):
        target = as_target(shift_gate(d))
        for sw in sweeps:
            for x in sw.grid:
                curves.append((d, mode, sw.parameter, sw.unit, float(x),
                               perturbed_fidelity(spec, target, sw.parameter, float(x), params)))
            lo, hi, hw = half_width(lambda x: perturbed_fidelity(spec, target, sw.parameter, x, params),
                                    start=HALF_WIDTH_START[sw.unit])
            widths.append((d, mode, sw.parameter, sw.unit, lo, hi, hw))
    return curves, widths


def default_sweeps() -> list:
    mhz_grid = tuple(np.round(np.linspace(-0.05, 0.05, 21), 6))
    us_grid = tuple(np.round(np.linspace(-0.01, 0.01, 21), 6))
    return [SweepSpec(p, mhz_grid if SWEEP_UNITS[p] == "MHz" else us_grid) for p in SWEEP_PARAMETERS]


# ---------------------------------------------------------------------------
# decoherence, error budget, tomography
# ---------------------------------------------------------------------------

COHERENT_SOURCES = ("osc_stark", "transmon_stark", "pulse_rounding")


def simulation_setup(params: SystemParams, sources=COHERENT_SOURCES):
    """(evolution params, clock) with the selected unmodelled effects switched on."""
    sim = params.replace(include_osc_stark="osc_stark" in sources,
                         include_transmon_drive_stark="transmon_stark" in sources)
    clock = FPGA_CLOCK_US if "pulse_rounding" in sources else None
    return sim, clock


def optimize_gate_set(gates, depth: int, config: OptimizerConfig, params: SystemParams, log=None) -> dict:
    out = {}
    for g in gates:
        res = multistart_optimize(as_target(g), g.d, depth, config, params)
        out[g.label] = res.best_params
        if log:
            log(f"{g.label}: F = {res.best_fidelity:.5f}")
    return out


def run_error_budget(gates, circuits: dict, params: SystemParams, noise: channels.NoiseModel,
                     sources=COHERENT_SOURCES) -> tuple:
    """(budget rows, coherent rows, summaries) for each gate.

    Budget rows follow the error-budget CSV layout; decoherence channels are
    simulated with the selected coherent sources on, and ``group:`` rows hold
    each group's infidelity in excess of the coherent entry. Coherent rows give the
    zero-noise infidelity with each source alone, and all together.
    """
    rows, coh_rows, summ = [], [], {}
    sim, clock = simulation_setup(params, sources)
    for g in gates:
        spec = circuits[g.label]
        b = channels.error_budget(spec, g, noise, sim, calib=params, clock=clock)
        for ps in (False, True):
            rows.append((g.label, "coherent", ps, b.coherent[ps], ""))
            for (name, p), (inf, acc) in b.channels.items():
                if p == ps:
                    rows.append((g.label, name, ps, inf, acc))
            for grp in channels.CHANNEL_GROUPS:
                rows.append((g.label, f"group:{grp}", ps, b.groups[(grp, ps)], ""))
            rows.append((g.label, "all", ps, b.total[ps][0], b.total[ps][1]))
        E0 = channels.restrict_channel(channels.circuit_channel(spec, params, noise.only()), g.d)
        for ps in (False, True):
            coh_rows.append((g.label, "optimizer", ps, 1 - channels.process_fidelity(E0, g, ps)[0]))
            for src in COHERENT_SOURCES:
                s, c = simulation_setup(params, (src,))
                E = channels.restrict_channel(channels.circuit_channel(spec, s, noise.only(), calib=params, clock=c),
                                              g.d)
                coh_rows.append((g.label, src, ps, 1 - channels.process_fidelity(E, g, ps)[0]))
        summ[g.label] = {
            "fidelity": {str(ps): 1 - b.total[ps][0] for ps in (False, True)},
            "acceptance": b.total[True][1],
            "largest": {str(ps): b.largest_group(ps) for ps in (False, True)},
            "non_additivity": {str(ps): b.non_additivity(ps) for ps in (False, True)},
        }
    return rows, coh_rows, summ


def simulated_tomography(E_sub, target, per_state: bool = False):
    """chi reconstructed from simulated post-selected outputs of the tomography inputs.

    By default every output is divided by the mean acceptance (the Choi
    trace), which matches the post-selected process fidelity exactly. With
    ``per_state`` each output is renormalised on its own, as a state
    tomography experiment would.
    """
    ins = tomography.tomo_input_states(target.d)
    p = channels.choi(E_sub).trace
    outs = []
    for r in ins:
        o = (E_sub @ r.reshape(-1, order="F")).reshape(target.d, target.d, order="F")
        outs.append(o / (np.real(np.trace(o)) if per_state else p))
    return tomography.reconstruct_chi(ins, outs)


def run_tomography(gates, circuits: dict, params: SystemParams, noise: channels.NoiseModel,
                   sources=COHERENT_SOURCES) -> dict:
    """Simulated chi tomography of each gate (post-selected outputs) with phase corrections."""
    sim, clock = simulation_setup(params, sources)
    out = {}
    for g in gates:
        E = channels.restrict_channel(channels.circuit_channel(circuits[g.label], sim, noise, calib=params,
                                                               clock=clock), g.d)
        ideal = tomography.chi_of_unitary(g.matrix)
        chi = simulated_tomography(E, g)
        f_chi = tomography.chi_fidelity(chi, ideal)
        phi, f_corr = tomography.phase_gate_correction(_normalized(E), g)
        out[g.label] = {
            "chi": chi.to_json(),
            "process_fidelity_chi": f_chi,
            "process_fidelity_chi_per_state": tomography.chi_fidelity(simulated_tomography(E, g, True), ideal),
            "process_fidelity_postselected": channels.process_fidelity(E, g, True)[0],
            "gate_fidelity": tomography.gate_fidelity_from_process(f_chi, g.d),
            "phase_gate_deg": math.degrees(phi),
            "process_fidelity_phase_corrected": f_corr,
        }
    return out


def _normalized(E_sub):
    """Trace-normalised (post-selected) version of a restricted channel."""
    return E_sub / channels.choi(E_sub).trace


def ququart_shift_proxy(spec: CircuitSpec, params: SystemParams, noise: channels.NoiseModel,
                        sources=COHERENT_SOURCES) -> float:
    """Fock-input fidelity proxy of a simulated post-selected shift gate."""
    d = spec.d
    sim, clock = simulation_setup(params, sources)
    E = channels.restrict_channel(channels.circuit_channel(spec, sim, noise, calib=params, clock=clock), d)
    pairs = []
    for n in range(d):
        r = np.zeros((d, d), complex)
        r[n, n] = 1.0
        o = (E @ r.reshape(-1, order="F")).reshape(d, d, order="F")
        pairs.append((r, o / np.real(np.trace(o))))
    return tomography.fock_avg_fidelity_proxy(shift_gate(d), pairs)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

OPTIMIZER_KEYS = {f.name for f in dataclasses.fields(OptimizerConfig)}


def _load_config(path) -> dict:
    if path is None:
        return {}
    import tomli

    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _optimizer_config(cfg: dict, seed: int, **defaults) -> OptimizerConfig:
    sec = dict(defaults)
    sec.update(cfg.get("optimizer", {}))
    unknown = set(sec) - OPTIMIZER_KEYS
    if unknown:
        raise ConfigError(f"unknown optimizer keys {sorted(unknown)}")
    for k in ("theta_bounds", "delta_bounds"):
        if k in sec and sec[k] is not None:
            sec[k] = tuple(sec[k])
    sec["seed"] = seed
    sec.setdefault("record_traces", False)
    try:
        return OptimizerConfig(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _params(args, cfg: dict) -> SystemParams:
    try:
        if args.params:
            return load_params(args.params)
        if "params" in cfg:
            return SystemParams.from_dict(cfg["params"])
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid parameters: {exc}") from exc
    return default_params()


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _circuit_rows_json(circuits: dict) -> list:
    return [{"key": list(k) if isinstance(k, tuple) else k, "circuit": c.to_json()} for k, c in circuits.items()]


def _cmd_optimize(args, cfg, params, w):
    sec = cfg.get("optimize", {})
    gate = named_gate(args.gate or sec.get("gate", "shift"), args.d or sec.get("d", 3))
    depth = args.depth or sec.get("depth", 6)
    conf = _optimizer_config(cfg, args.seed, batch=1000)
    if args.fixed_detuning:
        conf = conf.replace(optimize_detuning=False)
    out = run_optimize(gate, depth, conf, params)
    w.json("result.json", out)
    _log(f"best fidelity {out['best_fidelity']:.6f}")
    return {"gate": gate.label, "d": gate.d, "depth": depth, "optimizer": dataclasses.asdict(conf)}


def _cmd_depth_scan(args, cfg, params, w):
    sec = cfg.get("depth_scan", {})
    family = sec.get("family", "shift")
    if family not in ("shift", "haar"):
        raise ConfigError("depth_scan.family must be 'shift' or 'haar'")
    ds = sec.get("d", [2, 3, 4, 5, 6])
    thresholds = sec.get("thresholds", [0.99])
    modes = sec.get("modes", ["detuned", "fixed"])
    if set(modes) - set(MODES):
        raise ConfigError(f"modes must be among {sorted(MODES)}")
    conf = _optimizer_config(cfg, args.seed, batch=200)
    used = {"family": family, "d": ds, "thresholds": thresholds, "modes": modes,
            "seeds": sec.get("seeds", [0, 1, 2]), "optimizer": dataclasses.asdict(conf)}
    header = ["family", "seed", "d", "mode", "threshold", "depth_layers", "best_fidelity"]
    try:
        sc = run_depth_scaling(family, ds, thresholds, modes, conf, params, seeds=used["seeds"],
                               max_depth=sec.get("max_depth", 80), log=_log)
    except DepthCapExceeded as exc:
        w.csv("depths.csv", header, exc.scaling.rows)  # left as .partial
        raise
    w.csv("depths.csv", header, sc.rows)
    w.json("summary.json", scaling_summary(sc))
    w.json("circuits.json", _circuit_rows_json(sc.circuits))
    return used


def _cmd_ratio_sweep(args, cfg, params, w):
    sec = cfg.get("ratio_sweep", {})
    ds = sec.get("d", [3])
    ratios = sec.get("ratios", [0.0, 0.25, 0.5, 1.0])
    thr = sec.get("threshold", 0.99)
    conf = _optimizer_config(cfg, args.seed, batch=200)
    rows = run_chi_ratio_sweep(ds, ratios, thr, conf, params, log=_log)
    w.csv("ratio_sweep.csv", ["d", "chi_f_over_g", "mode", "depth_layers", "best_fidelity", "beats_chi0"], rows)
    return {"d": ds, "ratios": ratios, "threshold": thr, "optimizer": dataclasses.asdict(conf)}


def _cmd_cliffords(args, cfg, params, w):
    sec = cfg.get("cliffords", {})
    thr = sec.get("threshold", 0.99)
    conf = _optimizer_config(cfg, args.seed, batch=200)
    guess = sec.get("guess", {"detuned": 6, "fixed": 7})
    idx = sec.get("indices")
    rows = run_clifford_suite(thr, conf, params, guess=guess, indices=None if idx is None else set(idx), log=_log)
    w.csv("cliffords.csv", ["index", "word", "h_count", "s_count", "mode", "depth_layers", "best_fidelity"], rows)
    w.csv("histogram.csv", ["depth_layers", "count_detuned", "count_fixed"], clifford_histogram(rows))
    w.csv("heatmap.csv", ["h_count", "s_count", "mode", "mean_depth_layers", "n_gates"], clifford_heatmap(rows))
    return {"threshold": thr, "guess": guess, "indices": idx, "optimizer": dataclasses.asdict(conf)}


def _load_circuits(path, thr=None) -> dict:
    data = json.loads(Path(path).read_text())
    out = {}
    for item in data:
        fam, seed, d, mode, t = item["key"]
        if fam == "shift" and (thr is None or t == thr):
            out[(d, mode)] = CircuitSpec.from_json(item["circuit"])
    return out


def _cmd_robustness(args, cfg, params, w):
    sec = cfg.get("robustness", {})
    thr = sec.get("threshold", 0.999)
    ds = sec.get("d", [3, 4, 5])
    if "circuits" in sec:
        circuits = {k: v for k, v in _load_circuits(sec["circuits"], thr).items() if k[0] in ds}
    else:
        conf = _optimizer_config(cfg, args.seed, batch=200)
        sc = run_depth_scaling("shift", ds, [thr], ["detuned", "fixed"], conf, params, log=_log)
        circuits = {(k[2], k[3]): v for k, v in sc.circuits.items()}
        w.json("circuits.json", _circuit_rows_json(sc.circuits))
    sweeps = [SweepSpec(s["parameter"], tuple(s["grid"])) for s in sec["sweeps"]] if "sweeps" in sec \
        else default_sweeps()
    curves, widths = run_robustness(circuits, sweeps, params)
    w.csv("curves.csv", ["d", "mode", "parameter", "unit", "offset", "fidelity"], curves)
    w.csv("half_widths.csv", ["d", "mode", "parameter", "unit", "offset_minus", "offset_plus", "half_width"], widths)
    return {"threshold": thr, "d": ds, "sweeps": [dataclasses.asdict(s) for s in sweeps]}


def _gate_set_circuits(cfg, args, params, w):
    sec = cfg.get("gate_set", {})
    if "circuits" in sec:
        data = json.loads(Path(sec["circuits"]).read_text())
        return {k: CircuitSpec.from_json(v) for k, v in data.items()}
    conf = _optimizer_config(cfg, args.seed, batch=200, target_fidelity=sec.get("target_fidelity", 0.99))
    circuits = optimize_gate_set(main_gate_set(), sec.get("depth", 6), conf, params, log=_log)
    w.json("gate_set_circuits.json", {k: v.to_json() for k, v in circuits.items()})
    return circuits


def _sources(cfg, name):
    src = tuple(cfg.get(name, {}).get("sources", COHERENT_SOURCES))
    if set(src) - set(COHERENT_SOURCES):
        raise ConfigError(f"unknown coherent sources {sorted(set(src) - set(COHERENT_SOURCES))}")
    return src


def _cmd_error_budget(args, cfg, params, w):
    circuits = _gate_set_circuits(cfg, args, params, w)
    src = _sources(cfg, "error_budget")
    rows, coh, summ = run_error_budget(main_gate_set(), circuits, params, channels.NoiseModel.default(), src)
    w.csv("error_budget.csv", ["gate", "channel", "postselected", "infidelity", "acceptance_probability"], rows)
    w.csv("coherent_budget.csv", ["gate", "source", "postselected", "infidelity"], coh)
    w.json("summary.json", summ)
    return {"sources": list(src)}


def _cmd_tomography(args, cfg, params, w):
    circuits = _gate_set_circuits(cfg, args, params, w)
    src = _sources(cfg, "tomography")
    res = run_tomography(main_gate_set(), circuits, params, channels.NoiseModel.default(), src)
    w.json("tomography.json", res)
    return {"sources": list(src)}


def _cmd_populations(args, cfg, params, w):
    sec = cfg.get("populations", {})
    d = sec.get("d", 3)
    conf = _optimizer_config(cfg, args.seed, batch=200, target_fidelity=sec.get("threshold", 0.99))
    res = multistart_optimize(as_target(shift_gate(d)), d, sec.get("depth", 6), conf, params)
    rows = tomography.layerwise_populations(res.best_params, params, {f"g{n}": n for n in range(d)})
    tomography.write_populations_csv(w.path("populations.csv"), rows)
    w.json("circuit.json", res.best_params.to_json())
    return {"d": d, "depth": sec.get("depth", 6), "optimizer": dataclasses.asdict(conf)}


COMMANDS = {
    "optimize": _cmd_optimize,
    "depth-scan": _cmd_depth_scan,
    "ratio-sweep": _cmd_ratio_sweep,
    "cliffords": _cmd_cliffords,
    "robustness": _cmd_robustness,
    "error-budget": _cmd_error_budget,
    "tomography": _cmd_tomography,
    "populations": _cmd_populations,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jcqudit", description="JC qudit control experiments")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="TOML configuration file")
    ap.add_argument("--out", default=None, help="output directory (default results/<command>)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1, help="upper bound on compute threads")
    ap.add_argument("--params", help="parameter file (JSON or TOML, units mandatory)")
    ap.add_argument("--gate", help="optimize: gate name (shift, hadamard, clock, s, t, identity, haar<seed>)")
    ap.add_argument("--d", type=int, help="optimize: qudit dimension")
    ap.add_argument("--depth", type=int, help="optimize: number of layers")
    ap.add_argument("--fixed-detuning", action="store_true", help="optimize: keep delta = 0")
    return ap


def cli_entry(argv=None) -> int:
    """Run a subcommand; exit codes 0 success, 1 compute failure, 2 usage or config error."""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        _log("--threads must be >= 1")
        return 2
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(var, str(args.threads))
    out = Path(args.out or Path("results") / args.command)
    w = Writer(out)
    t0 = time.perf_counter()
    used = {}
    try:
        cfg = _load_config(args.config)
        params = _params(args, cfg)
        used = COMMANDS[args.command](args, cfg, params, w)
    except (ConfigError, KeyError) as exc:
        _log(f"configuration error: {exc}")
        return 2
    except (DepthCapExceeded, ArithmeticError, np.linalg.LinAlgError) as exc:
        _log(f"compute failure: {exc}; partial results kept with .partial suffix")
        write_manifest(out, args.command, {"argv": sys.argv[1:] if argv is None else list(argv), **used},
                       w.files, time.perf_counter() - t0, "failed")
        return 1
    w.commit()
    config = {"argv": sys.argv[1:] if argv is None else list(argv), "seed": args.seed,
              "params": params.to_dict("rad/us"), **used}
    write_manifest(out, args.command, config, w.files, time.perf_counter() - t0, "ok")
    return 0


def main() -> None:
    sys.exit(cli_entry())


if __name__ == "__main__":
    main()
