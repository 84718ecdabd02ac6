import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddqsim.device import (DeviceParams, DimonLevel, GHZ, MHZ,
                           device_dephasing_ratio, dispersive_shifts,
                           junction_sensitivity, level_energy, load_device,
                           photon_dephasing_ratio)
from ddqsim.errors import ConfigError

TWO_PI = 2 * math.pi

# Shipped config values, frozen (bench-sheet presentation units).
Q1_CONFIG = {
    "omega_D_GHz": 4.707, "omega_Q_GHz": 5.468, "alpha_D_MHz": -136,
    "alpha_Q_MHz": -156, "eta_MHz": -283, "omega_R_GHz": 9.997,
    "kappa_R_MHz": 0.81, "two_chi_DR_MHz": 1.42, "two_chi_QR_MHz": 1.86,
    "T1_D_us": 63.6, "T1_Q_us": 65.3, "T2E_D_us": 63.4, "T2E_Q_us": 87.1,
    "T2R_D_us": 15.6, "T2R_Q_us": 16.6, "r_junction": 0.963, "n_th": 0.02,
}
Q2_KEY_VALUES = {"omega_D_GHz": 4.353, "omega_Q_GHz": 5.403,
                 "T1_Q_us": 55.4, "r_junction": 0.959}
Q3_KEY_VALUES = {"omega_D_GHz": 4.235, "omega_Q_GHz": 5.276,
                 "kappa_R_MHz": 0.79, "r_junction": 0.931}


@pytest.fixture(scope="module")
def q1():
    return load_device("q1")


class TestDimonLevel:
    def test_exactly_six_members(self):
        assert len(DimonLevel) == 6

    def test_logical_subspace(self):
        assert DimonLevel.L10.is_logical and DimonLevel.L01.is_logical
        assert not DimonLevel.L00.is_logical
        assert not DimonLevel.L11.is_logical

    def test_label_roundtrip(self):
        for lv in DimonLevel:
            assert DimonLevel.from_label(lv.label) is lv

    def test_occupations(self):
        assert (DimonLevel.L02.m, DimonLevel.L02.n) == (0, 2)
        assert (DimonLevel.L20.m, DimonLevel.L20.n) == (2, 0)


class TestConfigLoading:
    def test_q1_values_verbatim(self, q1):
        assert q1.omega_D == pytest.approx(4.707 * GHZ)
        assert q1.omega_Q == pytest.approx(5.468 * GHZ)
        assert q1.alpha_Q == pytest.approx(-156 * MHZ)
        assert q1.eta == pytest.approx(-283 * MHZ)
        assert q1.kappa_R == pytest.approx(0.81 * MHZ)
        # loader halves the full-shift entries
        assert q1.chi_DR == pytest.approx(0.71 * MHZ)
        assert q1.chi_QR == pytest.approx(0.93 * MHZ)
        assert q1.T1_Q_us == 65.3
        assert q1.r_junction == 0.963
        assert q1.n_th_D == q1.n_th_Q == 0.02

    @pytest.mark.parametrize("name,expected",
                             [("q2", Q2_KEY_VALUES), ("q3", Q3_KEY_VALUES)])
    def test_builtin_devices(self, name, expected):
        params = load_device(name)
        assert params.omega_D == pytest.approx(expected["omega_D_GHz"] * GHZ)
        assert params.omega_Q == pytest.approx(expected["omega_Q_GHz"] * GHZ)
        assert params.r_junction == expected["r_junction"]

    def test_missing_key_rejected(self):
        cfg = dict(Q1_CONFIG)
        del cfg["eta_MHz"]
        with pytest.raises(ConfigError, match="missing"):
            DeviceParams.from_config(cfg)

    def test_unknown_key_rejected(self):
        cfg = dict(Q1_CONFIG, extra_knob=1.0)
        with pytest.raises(ConfigError, match="unknown"):
            DeviceParams.from_config(cfg)

    def test_junction_ratio_canonicalized(self):
        cfg = dict(Q1_CONFIG, r_junction=1.0 / 0.963)
        params = DeviceParams.from_config(cfg)
        assert params.r_junction == pytest.approx(0.963)

    def test_detuning_positive_enforced(self):
        cfg = dict(Q1_CONFIG, omega_Q_GHz=4.0)
        with pytest.raises(ConfigError):
            DeviceParams.from_config(cfg)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_device(tmp_path / "nope.json")


class TestLevelEnergy:
    def test_vacuum_energy_zero(self, q1):
        assert level_energy(q1, 0, 0) == 0.0

    def test_single_excitations_are_mode_frequencies(self, q1):
        assert level_energy(q1, 1, 0) == pytest.approx(TWO_PI * 4.707e9)
        assert level_energy(q1, 0, 1) == pytest.approx(TWO_PI * 5.468e9)

    def test_q1_both_modes_excited(self, q1):
        # omega_D + omega_Q - eta with eta = -283 MHz
        assert level_energy(q1, 1, 1) == pytest.approx(TWO_PI * 10.458e9)

    def test_doubly_excited_includes_anharmonicity(self, q1):
        # E(0,2) = 2 omega_Q - alpha_Q
        expect = 2 * q1.omega_Q - q1.alpha_Q
        assert level_energy(q1, 0, 2) == pytest.approx(expect)

    def test_negative_occupation_rejected(self, q1):
        with pytest.raises(ValueError):
            level_energy(q1, -1, 0)

    @given(m=st.integers(0, 4), n=st.integers(0, 4),
           scale=st.floats(0.5, 2.0))
    @settings(max_examples=40, deadline=None)
    def test_linear_in_eta(self, m, n, scale):
        base = load_device("q1")
        scaled = base.with_(eta=base.eta * scale)
        de = level_energy(scaled, m, n) - level_energy(base, m, n)
        assert de == pytest.approx(-(scale - 1) * base.eta * m * n, abs=1e-3)

    def test_transition_frequency_identity(self):
        for name in ("q1", "q2", "q3"):
            p = load_device(name)
            assert level_energy(p, 1, 0) - level_energy(p, 0, 0) == p.omega_D
            assert level_energy(p, 0, 1) - level_energy(p, 0, 0) == p.omega_Q


class TestDispersiveShifts:
    def test_no_coupling_no_shift(self):
        assert dispersive_shifts(0.0, 10.0, 5.0, -0.15, -0.28) == (0.0, 0.0)

    def test_ratio_is_eta_over_alpha(self):
        chi_qr, chi_dr = dispersive_shifts(0.1, 10.0, 5.0, -0.156, -0.283)
        assert chi_dr / chi_qr == pytest.approx(-0.283 / -0.156)

    def test_q1_style_magnitude(self):
        # alpha_Q/2pi = -156 MHz, g/(omega_R - omega_Q) = 0.05
        alpha_q = -156 * MHZ
        omega_q = 5.468 * GHZ
        omega_r = omega_q + 1.0 * GHZ
        g = 0.05 * (omega_r - omega_q)
        chi_qr, _ = dispersive_shifts(g, omega_r, omega_q, alpha_q, -283 * MHZ)
        assert chi_qr == pytest.approx(-0.39 * MHZ)

    def test_resonant_rejected(self):
        with pytest.raises(ValueError, match="resonant"):
            dispersive_shifts(0.1, 5.0, 5.0, -0.15, -0.28)

    def test_nondispersive_warns(self):
        with pytest.warns(UserWarning, match="dispersive"):
            dispersive_shifts(0.2, 6.0, 5.0, -0.15, -0.28)


class TestPhotonDephasingRatio:
    def test_symmetric_shifts_fully_protected(self):
        ratio, reduction = photon_dephasing_ratio(0.8, 0.8, 1.0)
        assert ratio == 0.0 and reduction == 1.0

    def test_single_shift_algebraic_limits(self):
        # chi_DR = 0 reduces the ratio to 4(k^2 + c^2)/(k^2 + 4c^2), which
        # runs from 1 (narrow resonator) to 4 (broad resonator).
        ratio_narrow, _ = photon_dephasing_ratio(1.0, 0.0, 1e-9)
        assert ratio_narrow == pytest.approx(1.0, rel=1e-6)
        ratio_broad, _ = photon_dephasing_ratio(1.0, 0.0, 1e9)
        assert ratio_broad == pytest.approx(4.0, rel=1e-6)
        kappa = 0.7
        expect = 4 * (kappa**2 + 1) / (kappa**2 + 4)
        ratio_mid, _ = photon_dephasing_ratio(1.0, 0.0, kappa)
        assert ratio_mid == pytest.approx(expect, rel=1e-12)

    def test_q1_half_shift_values(self):
        ratio, reduction = photon_dephasing_ratio(0.93, 0.71, 0.81)
        assert ratio == pytest.approx(0.2834, abs=2e-4)
        assert reduction == pytest.approx(1 - 0.2834, abs=2e-4)

    def test_zero_mean_shift_rejected(self):
        with pytest.raises(ValueError):
            photon_dephasing_ratio(0.5, -0.5, 1.0)

    @given(chi_q=st.floats(0.1, 3.0), chi_d=st.floats(0.1, 3.0),
           kappa=st.floats(0.1, 3.0), s=st.floats(0.1, 10.0))
    @settings(max_examples=60, deadline=None)
    def test_scale_invariance_and_symmetry(self, chi_q, chi_d, kappa, s):
        r1, _ = photon_dephasing_ratio(chi_q, chi_d, kappa)
        r2, _ = photon_dephasing_ratio(s * chi_q, s * chi_d, s * kappa)
        r3, _ = photon_dephasing_ratio(chi_d, chi_q, kappa)
        assert r1 == pytest.approx(r2, rel=1e-9)
        assert r1 == pytest.approx(r3, rel=1e-9)

    def test_device_conventions_differ(self, q1):
        # The measured-shift convention is ambiguous, so both are exposed:
        # half-shifts give ~72% reduction for Q1, full shifts ~43%.
        _, red_half = device_dephasing_ratio(q1, "half")
        _, red_full = device_dephasing_ratio(q1, "full")
        assert red_half == pytest.approx(0.7166, abs=2e-3)
        assert red_full == pytest.approx(0.4256, abs=2e-3)
        with pytest.raises(ValueError):
            device_dephasing_ratio(q1, "both")


class TestJunctionSensitivity:
    def test_symmetric_junctions_protected(self):
        sens, factor = junction_sensitivity(1.0, 1.0)
        assert sens == 0.0 and factor == 0.0

    def test_factor_values(self):
        _, f1 = junction_sensitivity(0.963, 1.0)
        assert f1 == pytest.approx(0.01867, abs=2e-5)
        delta = TWO_PI * 1.041e9
        sens, f3 = junction_sensitivity(0.931, delta)
        assert f3 == pytest.approx(0.03512, abs=2e-5)
        assert sens == pytest.approx(0.03512 / delta, rel=1e-3)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            junction_sensitivity(0.0, 1.0)
        with pytest.raises(ValueError):
            junction_sensitivity(-0.5, 1.0)

    def test_reciprocal_ratio_equivalent(self):
        assert junction_sensitivity(0.8, 2.0) == junction_sensitivity(1.25, 2.0)

    @given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
    @settings(max_examples=50, deadline=None)
    def test_monotone_decreasing_in_r(self, a, b):
        lo, hi = sorted((a, b))
        if hi - lo < 1e-9:
            return
        _, f_lo = junction_sensitivity(lo, 1.0)
        _, f_hi = junction_sensitivity(hi, 1.0)
        assert f_lo > f_hi
