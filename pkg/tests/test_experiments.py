import json
import math

import numpy as np
import pytest

from jcqudit import experiments as ex
from jcqudit.circuit import CircuitSpec
from jcqudit.layers import FPGA_CLOCK_US
from jcqudit.targets import shift_gate


class TestSweepSpec:
    def test_valid(self):
        s = ex.SweepSpec("tau_sb", (-0.01, 0.0, 0.01))
        assert s.unit == "us"

    @pytest.mark.parametrize("kw", [dict(parameter="bogus", grid=(0.0,)), dict(parameter="chi_f", grid=()),
                                    dict(parameter="chi_f", grid=(1.0,)), dict(parameter="chi_f", grid=(0, np.nan))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ex.SweepSpec(**kw)

    def test_default_sweeps_cover_all(self):
        assert {s.parameter for s in ex.default_sweeps()} == set(ex.SWEEP_PARAMETERS)


class TestPerturb:
    def test_zero_offset_is_nominal(self, params):
        spec = CircuitSpec.from_arrays(3, [1.0, 2.0], [0.1, 0.2], [0.3, 0.4], [0.2, -0.5], final=(1.0, 0.3))
        target = ex.as_target(shift_gate(3))
        f0 = ex.perturbed_fidelity(spec, target, "chi_e", 0.0, params)
        for p in ex.SWEEP_PARAMETERS:
            if p != "f_osc_ss":
                assert ex.perturbed_fidelity(spec, target, p, 0.0, params) == pytest.approx(f0, abs=1e-12)

    def test_f_ss_moves_both_stark_shifts(self, params):
        p, _ = ex.perturb("f_ss", 0.1, params)
        assert p.delta_f0g1 - params.delta_f0g1 == pytest.approx(2 * math.pi * 0.1)
        assert p.delta_e_stark - params.delta_e_stark == pytest.approx(math.pi * 0.1)

    def test_pulse_errors(self, params):
        _, e = ex.perturb("tau_ge", 0.002, params)
        assert e.tau_ge_offset == 0.002


class TestHalfWidth:
    def test_quadratic(self):
        lo, hi, hw = ex.half_width(lambda x: 1 - (x / 2) ** 2)
        assert hw == pytest.approx(0.2, rel=1e-8)
        assert lo == pytest.approx(-0.2, rel=1e-8)

    def test_asymmetric(self):
        lo, hi, hw = ex.half_width(lambda x: 1 - (x if x > 0 else 0.0) - (0.5 * x if x < 0 else 0.0) ** 2)
        assert hi == pytest.approx(0.01, rel=1e-6)
        assert lo == pytest.approx(-0.2, rel=1e-6)

    def test_flat_side(self):
        lo, hi, hw = ex.half_width(lambda x: 1 - max(x, 0.0), limit=10.0)
        assert math.isinf(lo) and math.isinf(hw)


class TestScaling:
    def test_prefactor(self):
        assert ex.prefactor({2: 4, 3: 9, 4: 16}) == pytest.approx(1.0)

    def test_summary(self):
        sc = ex.DepthScaling()
        for mode, a in (("detuned", 1.0), ("fixed", 1.4)):
            for thr, k in ((0.9, 0.8), (0.99, 1.0), (0.999, 1.2)):
                for d in (2, 3, 4, 5):
                    sc.rows.append(("shift", 0, d, mode, thr, round(k * a * d * d), 0.99))
        s = ex.scaling_summary(sc)
        ratio = [r for r in s["ratios"] if r["threshold"] == 0.99][0]["ratio"]
        assert ratio == pytest.approx(1.4, abs=0.05)
        table = [t for t in s["prefactor_vs_infidelity"] if t["mode"] == "detuned"][0]
        assert table["slope_per_decade"] < 0
        lo, hi = table["slope_ci95"]
        assert lo <= table["slope_per_decade"] <= hi

    def test_dominance(self):
        assert ex.stochastically_dominates([5, 6, 6], [6, 7, 7])
        assert not ex.stochastically_dominates([6, 7, 7], [5, 6, 6])

    def test_histogram_and_heatmap(self):
        rows = [(0, "I", 0, 0, "detuned", 5, 0.99), (0, "I", 0, 0, "fixed", 6, 0.99),
                (1, "H", 1, 0, "detuned", 6, 0.99), (1, "H", 1, 0, "fixed", 6, 0.99)]
        assert ex.clifford_histogram(rows) == [(5, 1, 0), (6, 1, 2)]
        hm = ex.clifford_heatmap(rows)
        assert (1, 0, "fixed", 6.0, 1) in hm


class TestSimulationSetup:
    def test_sources(self, params):
        sim, clock = ex.simulation_setup(params)
        assert sim.include_osc_stark and sim.include_transmon_drive_stark and clock == FPGA_CLOCK_US
        sim, clock = ex.simulation_setup(params, ())
        assert not sim.include_osc_stark and clock is None

    def test_rounding_reexported(self):
        assert ex.pulse_rounding(FPGA_CLOCK_US * 2.4) == pytest.approx(2 * FPGA_CLOCK_US)


class TestCli:
    def test_usage_error(self):
        assert ex.cli_entry(["nope"]) == 2

    def test_bad_threads(self, tmp_path):
        assert ex.cli_entry(["optimize", "--threads", "0", "--out", str(tmp_path)]) == 2

    def test_unknown_optimizer_key(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[optimizer]\nbogus = 1\n")
        assert ex.cli_entry(["optimize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_params_without_units(self, tmp_path):
        p = tmp_path / "p.json"
        p.write_text(json.dumps({"chi_f": 0.35}))
        assert ex.cli_entry(["optimize", "--params", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_optimize_run_and_manifest(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[optimizer]\nbatch = 4\nsteps = 5\n[optimize]\ngate = 'shift'\nd = 2\ndepth = 2\n")
        out = tmp_path / "o"
        assert ex.cli_entry(["optimize", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
        man = json.loads((out / "manifest.json").read_text())
        assert man["status"] == "ok" and man["outputs"] == ["result.json"]
        assert len(man["inputs_sha256"]) == 64
        res = json.loads((out / "result.json").read_text())
        assert CircuitSpec.from_json(res["circuit"]).depth == 2
        assert not list(out.glob("*.partial"))

    def test_deterministic_csv(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[optimizer]\nbatch = 4\nsteps = 5\n[depth_scan]\nd = [2]\nthresholds = [0.2]\n"
                       "modes = ['detuned']\n")
        texts = []
        for k in range(2):
            out = tmp_path / f"o{k}"
            assert ex.cli_entry(["depth-scan", "--config", str(cfg), "--out", str(out)]) == 0
            texts.append((out / "depths.csv").read_text())
        assert texts[0] == texts[1]
        assert texts[0].splitlines()[0] == "family,seed,d,mode,threshold,depth_layers,best_fidelity"

    def test_depth_cap_is_compute_failure(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[optimizer]\nbatch = 2\nsteps = 2\n[depth_scan]\nd = [3]\nthresholds = [0.999]\n"
                       "modes = ['fixed']\nmax_depth = 1\n")
        out = tmp_path / "o"
        assert ex.cli_entry(["depth-scan", "--config", str(cfg), "--out", str(out)]) == 1
        assert json.loads((out / "manifest.json").read_text())["status"] == "failed"
        partial = (out / "depths.csv.partial").read_text().splitlines()
        assert len(partial) == 2 and partial[1].startswith("shift,0,3,fixed,0.999,None")
