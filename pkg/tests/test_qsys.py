import json
import math

import pytest

from jcqudit.qsys import (SpaceDescriptor, SystemParams, basis_index, default_params, load_params, mhz,
                          save_params, to_mhz)


class TestSystemParams:
    def test_defaults_in_angular_units(self, params):
        assert params.chi_f == pytest.approx(2 * math.pi * 0.35)
        assert params.chi_e == pytest.approx(params.chi_f / 2)
        assert abs(params.chi_f / params.eps_sb) == pytest.approx(0.5)

    def test_anharmonicity_consistent_with_osc_stark(self, params):
        ratio = params.chi_e * params.delta_f0g1 / (2 * params.anharmonicity)
        assert abs(ratio) == pytest.approx(params.delta_osc_stark)

    def test_flags_gate_optional_terms(self, params):
        assert params.osc_stark == 0.0 and params.kerr == 0.0
        p = params.replace(include_osc_stark=True, include_self_kerr=True)
        assert p.osc_stark == params.delta_osc_stark
        assert p.kerr == params.self_kerr

    def test_chi_ratio(self, params):
        p = params.with_chi_ratio(0.25)
        assert p.chi_f == pytest.approx(0.25 * params.eps_sb)
        assert p.chi_e == pytest.approx(p.chi_f / 2)

    @pytest.mark.parametrize("field", ["eps_ge", "eps_sb"])
    def test_rejects_nonpositive_drive(self, params, field):
        with pytest.raises(ValueError):
            params.replace(**{field: 0.0})

    def test_rejects_nan(self, params):
        with pytest.raises(ValueError):
            params.replace(chi_f=float("nan"))


class TestParamFiles:
    def test_units_mandatory(self):
        with pytest.raises(ValueError, match="units"):
            SystemParams.from_dict({"chi_f": 0.35})

    def test_unknown_units(self):
        with pytest.raises(ValueError):
            SystemParams.from_dict({"units": "GHz", "chi_f": 0.35})

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            SystemParams.from_dict({"units": "MHz", "chi_g": 0.35})

    def test_mhz_round_trip(self, tmp_path, params):
        path = tmp_path / "p.json"
        save_params(params, path)
        data = json.loads(path.read_text())
        assert data["units"] == "MHz"
        assert data["chi_f"] == pytest.approx(0.35)
        back = load_params(path)
        for name in ("chi_e", "chi_f", "eps_sb", "anharmonicity"):
            assert getattr(back, name) == pytest.approx(getattr(params, name), rel=1e-12)

    def test_toml(self, tmp_path):
        path = tmp_path / "p.toml"
        path.write_text('units = "rad/us"\nchi_f = 1.5\ninclude_osc_stark = true\n')
        p = load_params(path)
        assert p.chi_f == 1.5 and p.include_osc_stark

    def test_conversions(self):
        assert to_mhz(mhz(0.7)) == pytest.approx(0.7)


class TestSpace:
    def test_dims(self):
        assert SpaceDescriptor(3).dim == 9
        assert SpaceDescriptor(3, include_boundary=True).dim == 12

    def test_q_major_index(self):
        s = SpaceDescriptor(3, include_boundary=True)
        assert basis_index("g", 0, s) == 0
        assert basis_index("e", 1, s) == 5
        assert basis_index("f", 3, s) == 11
        assert s.g_indices() == [0, 1, 2]

    @pytest.mark.parametrize("q,n", [("h", 0), ("g", 3), (3, 0)])
    def test_index_errors(self, q, n):
        with pytest.raises(IndexError):
            basis_index(q, n, SpaceDescriptor(3))

    @pytest.mark.parametrize("d", [1, 0, 2.5])
    def test_invalid_d(self, d):
        with pytest.raises(ValueError):
            SpaceDescriptor(d)


def test_default_params_is_fresh():
    assert default_params() == default_params()
