import math

import numpy as np
import pytest

from jcqudit.circuit import TargetGate, spec_fidelity
from jcqudit.optimizer import (DepthCapExceeded, OptimizerConfig, bracket_depth_search, depth_scaling_fit,
                               depth_search, initial_parameters, multistart_optimize)
from jcqudit.targets import shift_gate

X2 = TargetGate(shift_gate(2).matrix, "X")
FAST = OptimizerConfig(batch=16, steps=300, record_traces=True)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"batch": 0}, {"steps": -1}, {"lr": 0.0}, {"theta_bounds": (1.0, 0.5)}])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            OptimizerConfig(**kw)

    def test_delta_bounds(self, params):
        lo, hi = OptimizerConfig().resolved_delta_bounds(params, 3)
        assert hi == pytest.approx(3 * params.chi_f) and lo == -hi
        assert OptimizerConfig().resolved_delta_bounds(params.with_chi_ratio(0.0), 3)[1] == params.eps_sb

    def test_starts_within_bounds(self, params):
        cfg = OptimizerConfig(batch=50)
        x = initial_parameters(50, 3, cfg, (-1.0, 1.0), 1)
        th = x[:, :12].reshape(50, 3, 4)[..., 0]
        assert th.min() >= cfg.theta_bounds[0] and th.max() <= math.pi
        assert np.abs(x[:, :12].reshape(50, 3, 4)[..., 3]).max() <= 1.0


class TestMultistart:
    def test_deterministic(self, params):
        a = multistart_optimize(X2, 2, 2, FAST.replace(steps=30), params)
        b = multistart_optimize(X2, 2, 2, FAST.replace(steps=30), params)
        assert a.best_fidelity == b.best_fidelity
        assert a.best_params == b.best_params

    def test_reports_consistent_fidelity(self, params):
        r = multistart_optimize(X2, 2, 3, FAST, params)
        assert spec_fidelity(r.best_params, params, X2) == pytest.approx(r.best_fidelity, abs=1e-12)
        assert r.per_start_trace.shape[1] == FAST.batch

    def test_qubit_shift_converges(self, params):
        r = multistart_optimize(X2, 2, 4, OptimizerConfig(batch=32, steps=2000, target_fidelity=0.99), params)
        assert r.converged and r.best_fidelity >= 0.99

    def test_theta_respects_bounds(self, params):
        r = multistart_optimize(X2, 2, 3, FAST, params)
        th = r.best_params.arrays()[0]
        assert th.min() >= FAST.theta_bounds[0] - 1e-12 and th.max() <= math.pi + 1e-12

    def test_fixed_detuning_stays_zero(self, params):
        r = multistart_optimize(X2, 2, 3, FAST.replace(optimize_detuning=False), params)
        assert np.all(r.best_params.arrays()[3] == 0.0)

    def test_no_trailing_rotation(self, params):
        r = multistart_optimize(X2, 2, 2, FAST.replace(trailing_rotation=False, steps=10), params)
        assert r.best_params.final_rotation is None

    def test_patience_stops_early(self, params):
        r = multistart_optimize(X2, 2, 1, FAST.replace(steps=2000, patience=20, min_improvement=1.0), params)
        assert r.steps_run <= 21

    def test_dimension_mismatch(self, params):
        with pytest.raises(ValueError):
            multistart_optimize(X2, 3, 2, FAST, params)


class TestDepthSearch:
    CFG = OptimizerConfig(batch=32, steps=1500)

    def test_linear_and_bracket_agree(self, params):
        a = depth_search(X2, 2, 0.99, self.CFG, params)
        b = bracket_depth_search(X2, 2, 0.99, self.CFG, params, guess=a.depth + 2)
        c = bracket_depth_search(X2, 2, 0.99, self.CFG, params, guess=1)
        assert a.depth == b.depth == c.depth
        assert b.results[b.depth].best_fidelity >= 0.99

    def test_cap(self, params):
        with pytest.raises(DepthCapExceeded) as exc:
            depth_search(X2, 2, 0.99, self.CFG.replace(steps=5), params, max_depth=1)
        assert 1 in exc.value.record.fidelities

    def test_threshold_range(self, params):
        with pytest.raises(ValueError):
            bracket_depth_search(X2, 2, 1.0, self.CFG, params, guess=2)


class TestScalingFit:
    def test_exact_quadratic(self):
        fit = depth_scaling_fit({d: 0.5 * d * d + d + 2 for d in range(2, 7)})
        assert (fit.a, fit.b, fit.c) == pytest.approx((0.5, 1.0, 2.0))
        assert fit.r_squared == pytest.approx(1.0)
        assert fit(4) == pytest.approx(14.0)

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            depth_scaling_fit({2: 3, 3: 5})
