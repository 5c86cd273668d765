import math

import numpy as np
import pytest
from scipy.linalg import expm

from jcqudit import layers
from jcqudit.layers import (FPGA_CLOCK_US, LayerKind, PulseErrors, composite_gf_rotation, composite_pulses,
                            jc_pulse_duration, jc_unitary, layer_hamiltonian, pulse_rounding, rotation_unitary)
from jcqudit.qsys import SpaceDescriptor


def _from_generator(H, frame, tau):
    return np.diag(frame) @ expm(-1j * H * tau)


def _unitarity(U):
    return np.abs(U.conj().T @ U - np.eye(len(U))).max()


SPACES = [SpaceDescriptor(3), SpaceDescriptor(3, include_boundary=True), SpaceDescriptor(5, include_boundary=True)]


@pytest.mark.parametrize("space", SPACES, ids=lambda s: f"d{s.d}N{s.n_levels}")
class TestLayerUnitaries:
    def test_rotations_unitary(self, params, rng, space):
        for kind in (LayerKind.GE, LayerKind.EF):
            U = rotation_unitary(kind, rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi), params, space)
            assert _unitarity(U) < 1e-12

    def test_jc_unitary(self, params, rng, space):
        for _ in range(5):
            U = jc_unitary(rng.uniform(0, 2 * math.pi), rng.uniform(-2, 2), params, space)
            assert _unitarity(U) < 1e-12

    def test_rotation_matches_expm(self, params, rng, space):
        for kind in (LayerKind.GE, LayerKind.EF):
            th, ph = rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi)
            H, frame, tau = layer_hamiltonian(kind, {"theta": th, "phi": ph}, params, space)
            U = rotation_unitary(kind, th, ph, params, space)
            assert np.abs(U - _from_generator(H, frame, tau)).max() < 1e-9

    def test_jc_matches_expm(self, params, rng, space):
        for _ in range(3):
            ps, dl = rng.uniform(0, 2 * math.pi), rng.uniform(-2, 2)
            H, frame, tau = layer_hamiltonian(LayerKind.JC, {"phi_sb": ps, "delta": dl}, params, space)
            assert np.abs(jc_unitary(ps, dl, params, space) - _from_generator(H, frame, tau)).max() < 1e-9

    def test_composite_matches_pulse_sequence(self, params, rng, space):
        th, ph = rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi)
        U = np.eye(space.dim, dtype=complex)
        for H, frame, tau in composite_pulses(th, ph, params, space):
            U = _from_generator(H, frame, tau) @ U
        assert np.abs(composite_gf_rotation(th, ph, params, space) - U).max() < 1e-9

    def test_stark_corrected_matches_expm(self, params, rng, space):
        p = params.replace(include_transmon_drive_stark=True)
        for kind in (LayerKind.GE, LayerKind.EF):
            th, ph = rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi)
            H, frame, tau = layer_hamiltonian(kind, {"theta": th, "phi": ph}, p, space)
            assert np.abs(rotation_unitary(kind, th, ph, p, space) - _from_generator(H, frame, tau)).max() < 1e-9

    def test_miscalibrated_jc_matches_expm(self, params, space):
        if not space.include_boundary:
            pytest.skip("an open cutoff doublet needs the boundary level")
        err = PulseErrors(sb_detuning=0.05, tau_sb_offset=0.003)
        calib = params.replace(chi_f=params.chi_f * 1.01)
        H, frame, tau = layer_hamiltonian(LayerKind.JC, {"phi_sb": 0.4, "delta": 0.7}, params, space,
                                          calib=calib, errors=err)
        U = jc_unitary(0.4, 0.7, params, space, calib=calib, errors=err)
        assert np.abs(U - _from_generator(H, frame, tau)).max() < 1e-9


class TestJCClosure:
    @pytest.mark.parametrize("d", [2, 3, 4, 6])
    def test_cutoff_doublet_returns(self, params, d):
        """The |f,d-1>-|g,d> doublet completes a closed rotation, so |g,d> never leaks down."""
        space = SpaceDescriptor(d, include_boundary=True)
        U = jc_unitary(0.3, 0.9, params, space)
        gi, fi = d, 2 * space.n_levels + d - 1
        assert abs(U[gi, fi]) < 1e-12 and abs(U[fi, gi]) < 1e-12
        assert abs(abs(U[gi, gi]) - 1) < 1e-12

    def test_g0_untouched(self, params):
        U = jc_unitary(1.1, 0.2, params, SpaceDescriptor(3))
        assert U[0, 0] == 1.0

    def test_duration_formula(self, params):
        d = 3
        assert jc_pulse_duration(0.0, params, d) == pytest.approx(math.pi / (math.sqrt(d) * params.eps_sb))
        assert jc_pulse_duration(1.0, params, d) < jc_pulse_duration(0.0, params, d)

    def test_duration_rejects_bad_d(self, params):
        with pytest.raises(ValueError):
            jc_pulse_duration(0.0, params, 0)

    def test_total_time_scaling(self, params):
        """Depth ~ d^2 layers of duration ~ d^-1/2 gives time ~ d^1.5."""
        ds = np.arange(2, 9)
        total = np.array([d**2 * jc_pulse_duration(0.0, params, d) for d in ds])
        assert np.all(np.diff(total) > 0)
        slope = np.polyfit(np.log(ds), np.log(total), 1)[0]
        assert slope == pytest.approx(1.5, abs=0.2)


class TestRounding:
    def test_multiple_of_clock(self):
        t = pulse_rounding(0.1234)
        assert abs(t / FPGA_CLOCK_US - round(t / FPGA_CLOCK_US)) < 1e-9
        assert abs(t - 0.1234) <= FPGA_CLOCK_US / 2

    def test_vectorised(self):
        assert pulse_rounding(np.array([0.0, FPGA_CLOCK_US])).tolist() == [0.0, FPGA_CLOCK_US]

    def test_bad_clock(self):
        with pytest.raises(ValueError):
            pulse_rounding(1.0, clock=0.0)


def test_nonfinite_parameters_rejected(params):
    with pytest.raises(ValueError):
        layers.r_ge_block(np.arange(3), float("nan"), 0.0, params)
