import math

import numpy as np
import pytest

from jcqudit import channels as ch
from jcqudit.circuit import CircuitSpec, circuit_unitary, gate_fidelity, TargetGate
from jcqudit.layers import FPGA_CLOCK_US, LayerKind
from jcqudit.qsys import SpaceDescriptor
from jcqudit.targets import QuditGate, shift_gate

SPACE = SpaceDescriptor(3, include_boundary=True)


def spec(rng, L=2, d=3):
    return CircuitSpec.from_arrays(d, rng.uniform(0.3, 3, L), rng.uniform(0, 6, L), rng.uniform(0, 6, L),
                                   rng.uniform(-1, 1, L), final=(1.0, 0.5))


def choi_full(E):
    return ch.choi(E)


class TestNoiseModel:
    def test_default_rates(self):
        nm = ch.NoiseModel.default()
        rates = {j.name: j.rate for j in nm.jumps}
        assert 1 / rates["decay_ef"] == pytest.approx(28.85)
        assert 1 / rates["cavity_decay"] == pytest.approx(1298.0)

    def test_only(self):
        nm = ch.NoiseModel.default().only("decay_ge")
        assert [j.name for j in nm.jumps if j.rate > 0] == ["decay_ge"]
        with pytest.raises(KeyError):
            nm.only("bogus")

    @pytest.mark.parametrize("rate", [-1.0, float("nan")])
    def test_bad_rate(self, rate):
        with pytest.raises(ValueError):
            ch.Jump("x", "a", rate)

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            ch.Jump("x", "h<f", 1.0)

    def test_operators(self):
        a = ch.Jump("c", "a", 1.0).operator(3)
        assert a[1, 2] == pytest.approx(math.sqrt(2))  # |g,1><g,2| sqrt(2)
        s = ch.Jump("d", "g<e", 1.0).operator(3)
        assert s[0, 3] == 1.0


class TestLiouvillian:
    def test_hamiltonian_only_matches_unitary(self, params):
        H, frame, tau = ch.layers.layer_hamiltonian(LayerKind.GE, {"theta": 1.0, "phi": 0.3}, params, SPACE)
        E = ch.layer_propagator(LayerKind.GE, {"theta": 1.0, "phi": 0.3}, params, ch.NoiseModel.noiseless(), SPACE)
        U = ch.layers.rotation_unitary(LayerKind.GE, 1.0, 0.3, params, SPACE)
        assert np.abs(E - ch.unitary_superop(U)).max() < 1e-10

    def test_non_hermitian_rejected(self):
        H = np.zeros((3, 3))
        H[0, 1] = 1.0
        with pytest.raises(ValueError):
            ch.liouvillian(H, ch.NoiseModel.noiseless())

    def test_trace_preserving_and_cp(self, params, rng):
        E = ch.circuit_channel(spec(rng), params, ch.NoiseModel.default(), SPACE)
        n = SPACE.dim
        tr = ch.trace_functional(n)
        assert np.abs(tr @ E - tr).max() < 1e-9
        # Choi matrix of the full channel
        T = E.reshape(n, n, n, n, order="F")
        J = np.transpose(T, (0, 2, 1, 3)).reshape(n * n, n * n) / n
        J = 0.5 * (J + J.conj().T)
        assert np.linalg.eigvalsh(J).min() >= -1e-9

    def test_noiseless_circuit_equals_unitary(self, params, rng):
        s = spec(rng)
        E = ch.circuit_channel(s, params, ch.NoiseModel.noiseless(), SPACE)
        U = circuit_unitary(s, params, SPACE)
        assert np.abs(E - ch.unitary_superop(U)).max() < 1e-9

    def test_rounding_changes_channel_slightly(self, params, rng):
        s = spec(rng)
        a = ch.circuit_channel(s, params, ch.NoiseModel.noiseless(), SPACE)
        b = ch.circuit_channel(s, params, ch.NoiseModel.noiseless(), SPACE, clock=FPGA_CLOCK_US)
        diff = np.abs(a - b).max()
        assert 0 < diff < 0.5


class TestFidelity:
    def test_identity(self):
        E = np.eye(9, dtype=complex)
        F, p = ch.process_fidelity(E, QuditGate(np.eye(3), "I"))
        assert (F, p) == pytest.approx((1.0, 1.0))

    def test_matches_unitary_fidelity(self, params, rng):
        s = spec(rng, L=3)
        g = shift_gate(3)
        U = circuit_unitary(s, params, SPACE)
        Fu = gate_fidelity(U, TargetGate(g.matrix), SPACE)
        F, _ = ch.process_fidelity(ch.unitary_superop(U), g)
        assert F == pytest.approx(Fu, abs=1e-12)

    def test_postselection_not_worse(self, params, rng):
        E = ch.circuit_channel(spec(rng), params, ch.NoiseModel.default(), SPACE)
        g = shift_gate(3)
        f0, p = ch.process_fidelity(E, g, False)
        f1, p1 = ch.process_fidelity(E, g, True)
        assert p == p1 and 0 < p <= 1 and f1 >= f0

    def test_zero_acceptance(self):
        with pytest.raises(ZeroDivisionError):
            ch.process_fidelity(np.zeros((9, 9)), shift_gate(3), True)

    def test_restricted_choi_psd(self, params, rng):
        E = ch.restrict_channel(ch.circuit_channel(spec(rng), params, ch.NoiseModel.default(), SPACE), 3)
        J = ch.choi(E)
        assert np.linalg.eigvalsh(J.matrix).min() >= -1e-9
        assert J.trace <= 1 + 1e-12


class TestErrorBudget:
    def test_structure_and_csv(self, params, rng, tmp_path):
        s = spec(rng, L=1)
        b = ch.error_budget(s, shift_gate(3), ch.NoiseModel.default(), params)
        assert set(n for n, _ in b.channels) == set(ch.NoiseModel.default().names)
        assert b.largest_group(False) in ch.CHANNEL_GROUPS
        for (name, ps), (inf, acc) in b.channels.items():
            assert 0 <= inf <= 1 and 0 < acc <= 1 + 1e-12
        assert abs(b.non_additivity(True)) < 0.05
        path = tmp_path / "b.csv"
        ch.write_budget_csv(path, {"X": b})
        head = path.read_text().splitlines()[0]
        assert head == "gate,channel,postselected,infidelity,acceptance_probability"
