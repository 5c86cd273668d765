import math

import numpy as np
import pytest

from jcqudit.circuit import (CircuitEngine, CircuitSpec, LayerParams, StateTarget, TargetGate, circuit_unitary,
                             finite_difference_gradient, gate_fidelity, gradient, layer_unitaries,
                             objective_columns, sequential_product, spec_fidelity, tree_product)
from jcqudit.layers import PulseErrors
from jcqudit.qsys import SpaceDescriptor
from jcqudit.targets import fourier_gate, haar_random, shift_gate


def random_spec(rng, d, L, final=True):
    th = rng.uniform(0.2, math.pi, L)
    pq = rng.uniform(0, 2 * math.pi, L)
    ps = rng.uniform(0, 2 * math.pi, L)
    dl = rng.uniform(-1.5, 1.5, L)
    fin = (rng.uniform(0.2, math.pi), rng.uniform(0, 2 * math.pi)) if final else None
    return CircuitSpec.from_arrays(d, th, pq, ps, dl, final=fin)


def tg(gate):
    return TargetGate(gate.matrix, gate.label)


class TestCircuitSpec:
    def test_json_round_trip(self, rng):
        s = random_spec(rng, 3, 4)
        assert CircuitSpec.from_json(s.to_json()) == s

    def test_param_vector_round_trip(self, rng):
        s = random_spec(rng, 3, 3)
        assert s.with_param_vector(s.param_vector()) == s
        assert len(s.param_vector()) == 4 * 3 + 2

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            CircuitSpec(3, [LayerParams(float("inf"), 0, 0, 0)])

    def test_rejects_small_d(self):
        with pytest.raises(ValueError):
            CircuitSpec(1, [])

    def test_save_load(self, tmp_path, rng):
        s = random_spec(rng, 4, 2)
        s.save(tmp_path / "c.json")
        assert CircuitSpec.load(tmp_path / "c.json") == s


class TestTargets:
    def test_non_unitary_rejected(self):
        with pytest.raises(ValueError):
            TargetGate(np.ones((3, 3)))

    def test_state_normalisation(self):
        with pytest.raises(ValueError):
            StateTarget(np.array([1.0, 1.0]), np.array([1.0, 0.0]))


class TestProducts:
    @pytest.mark.parametrize("L", [1, 2, 5, 8])
    def test_tree_equals_sequential(self, params, rng, L):
        s = random_spec(rng, 3, L)
        space = SpaceDescriptor(3, include_boundary=True)
        mats = layer_unitaries(s, params, space)
        assert np.abs(tree_product(mats, space.dim) - sequential_product(mats, space.dim)).max() < 1e-12

    def test_empty_product(self):
        assert np.array_equal(tree_product([], 4), np.eye(4))

    def test_circuit_unitary_is_unitary(self, params, rng):
        U = circuit_unitary(random_spec(rng, 3, 6), params)
        assert np.abs(U.conj().T @ U - np.eye(9)).max() < 1e-12

    def test_boundary_space_agrees_on_g_block(self, params, rng):
        """Closure keeps the computational block identical with and without |g,d>."""
        s = random_spec(rng, 3, 5)
        a = circuit_unitary(s, params, SpaceDescriptor(3))[:3, :3]
        b = circuit_unitary(s, params, SpaceDescriptor(3, include_boundary=True))[:3, :3]
        assert np.abs(a - b).max() < 1e-12


class TestEngine:
    @pytest.mark.parametrize("boundary", [False, True])
    def test_matches_dense(self, params, rng, boundary):
        space = SpaceDescriptor(4, include_boundary=boundary)
        target = tg(haar_random(4, 7))
        for _ in range(5):
            s = random_spec(rng, 4, 5)
            dense = gate_fidelity(circuit_unitary(s, params, space), target, space)
            assert spec_fidelity(s, params, target, space) == pytest.approx(dense, abs=1e-12)

    def test_fused_matches_reference(self, params, rng):
        d, L, B = 3, 4, 6
        eng = CircuitEngine(d, params, SpaceDescriptor(d, include_boundary=True),
                            calib=params.replace(chi_f=params.chi_f * 0.99),
                            errors=PulseErrors(0.01, -0.02, 1e-3, 2e-3))
        X, Y, _ = objective_columns(tg(fourier_gate(3)), eng.space)
        args = [rng.uniform(0.2, 3, (B, L)), rng.uniform(0, 6, (B, L)), rng.uniform(0, 6, (B, L)),
                rng.uniform(-1, 1, (B, L))]
        final = (rng.uniform(0.2, 3, B), rng.uniform(0, 6, B))
        o1, g1 = eng.evaluate(*args, X, Y, final=final)
        o2, g2 = eng.evaluate_reference(*args, X, Y, final=final)
        assert np.abs(o1 - o2).max() < 1e-12
        for k in g1:
            assert np.abs(g1[k] - g2[k]).max() < 1e-11

    def test_state_objective(self, params, rng):
        psi0 = np.array([1, 0, 0], complex)
        psi1 = np.array([0, 1, 0], complex)
        s = random_spec(rng, 3, 3)
        space = SpaceDescriptor(3)
        U = circuit_unitary(s, params, space)
        expected = abs(U[1, 0]) ** 2
        assert spec_fidelity(s, params, StateTarget(psi0, psi1), space) == pytest.approx(expected, abs=1e-12)

    def test_identity_circuit_limit(self, params):
        """theta = 2 pi composite rotations and JC layers on |g,0> only leave |g,0> populated."""
        s = CircuitSpec.from_arrays(3, [0.0], [0.0], [0.0], [0.0])
        U = circuit_unitary(s, params)
        assert abs(abs(U[0, 0]) - 1) < 1e-12


class TestGradient:
    def test_fifty_random_circuits(self, params):
        rng = np.random.default_rng(50)
        worst = 0.0
        for i in range(50):
            d = int(rng.integers(2, 5))
            L = int(rng.integers(1, 6))
            s = random_spec(rng, d, L, final=bool(i % 2))
            target = tg(haar_random(d, i))
            g = gradient(s, params, target)
            fd = finite_difference_gradient(s, params, target, h=1e-5)
            worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
        assert worst < 1e-5

    def test_state_target_gradient(self, params, rng):
        t = StateTarget(np.array([1, 0, 0], complex), np.array([0, 0, 1], complex))
        s = random_spec(rng, 3, 3)
        g = gradient(s, params, t)
        fd = finite_difference_gradient(s, params, t)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5

    def test_step_bounds(self, params, rng):
        with pytest.raises(ValueError):
            finite_difference_gradient(random_spec(rng, 3, 1), params, tg(shift_gate(3)), h=1e-2)
