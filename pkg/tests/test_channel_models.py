from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import factorial, jv

from secure_stn.channel_models import (
    BEAM_GAIN_CONST,
    ChannelSet,
    RobustSpec,
    SatChannelSpec,
    TerrestrialChannelSpec,
    apply_csi_error,
    beam_gain,
    correlation_matrix,
    draw_channel_set,
    sample_csi_errors,
    sample_sat_channel,
    sample_terrestrial_channel,
)
from secure_stn.experiments import default_links

from helpers import cn


def _series_gain(u: float) -> float:
    """Independent evaluation of the beam pattern from Bessel power series."""
    def j(n, x, terms=40):
        k = np.arange(terms)
        return float(np.sum((-1.0) ** k / (factorial(k) * factorial(k + n)) * (x / 2) ** (2 * k + n)))
    return (j(1, u) / (2 * u) + 36 * j(3, u) / u**3) ** 2


class TestBeamGain:
    def test_boresight_is_exactly_one(self):
        assert beam_gain(0.0, 0.4) == 1.0

    def test_half_power_at_three_db_angle(self):
        assert beam_gain(0.4, 0.4) == pytest.approx(0.5, abs=0.01)
        assert beam_gain(0.4, 0.4) == pytest.approx(_series_gain(BEAM_GAIN_CONST), rel=1e-10)

    def test_main_lobe_decreasing(self):
        assert beam_gain(0.2, 0.4) > beam_gain(0.4, 0.4)
        phis = np.linspace(0, 0.4, 200)
        g = beam_gain(phis, 0.4)
        assert np.all(np.diff(g) < 0)
        assert np.all((g >= 0) & (g <= 1))

    def test_continuous_near_zero(self):
        # the small-u branch must agree with the Bessel expression at the switch
        phi = np.degrees(np.arcsin(1.2e-4 * np.sin(np.radians(0.4)) / BEAM_GAIN_CONST))
        u = 1.2e-4
        direct = (jv(1, u) / (2 * u) + 36 * jv(3, u) / u**3) ** 2
        assert beam_gain(phi, 0.4) == pytest.approx(direct, rel=1e-9)
        assert beam_gain(1e-9, 0.4) == pytest.approx(1.0, abs=1e-12)

    def test_reference_offsets(self):
        assert beam_gain(0.01, 0.4) == pytest.approx(0.99958, abs=1e-5)
        assert beam_gain(30.0, 0.4) < 1e-6

    def test_bad_width(self):
        with pytest.raises(ValueError):
            beam_gain(0.1, 0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.0, 0.4))
    def test_symmetric_in_angle(self, phi):
        assert beam_gain(phi, 0.4) == pytest.approx(beam_gain(-phi, 0.4), rel=1e-12)


class TestSatChannel:
    def test_zero_parameters_give_zero(self, rng):
        spec = SatChannelSpec(0.0, sr_b=0.0, sr_omega=0.0)
        assert np.all(sample_sat_channel(spec, 3, 2, rng) == 0)

    def test_second_moment_heavy_shadowing(self, rng):
        spec = SatChannelSpec(0.0)
        h = sample_sat_channel(spec, 200_000, 1, rng)
        assert np.mean(np.abs(h) ** 2) == pytest.approx(2 * 0.063 + 8.97e-4, rel=0.01)

    def test_nakagami_concentrates(self, rng):
        spec = SatChannelSpec(0.0, sr_b=0.0, sr_m=1e6, sr_omega=1.0)
        h = np.abs(sample_sat_channel(spec, 10_000, 1, rng))
        assert h.mean() == pytest.approx(1.0, abs=1e-2)
        assert h.std() < 1e-2

    def test_beam_gain_scales_power(self, rng):
        a = sample_sat_channel(SatChannelSpec(0.0), 50, 3, np.random.default_rng(1))
        b = sample_sat_channel(SatChannelSpec(0.4), 50, 3, np.random.default_rng(1))
        np.testing.assert_allclose(np.abs(b) ** 2, np.abs(a) ** 2 * beam_gain(0.4, 0.4), rtol=1e-12)

    def test_shape_and_validation(self, rng):
        assert sample_sat_channel(SatChannelSpec(0.1), 4, 2, rng).shape == (4, 2)
        with pytest.raises(ValueError):
            sample_sat_channel(SatChannelSpec(0.1), 0, 2, rng)
        with pytest.raises(ValueError):
            SatChannelSpec(0.1, sr_m=0.2)
        with pytest.raises(ValueError):
            SatChannelSpec(0.1, sr_b=-1.0)


class TestCorrelation:
    def test_unit_diagonal_and_psd(self):
        R = correlation_matrix(TerrestrialChannelSpec(4, 0.0, 5.0))
        np.testing.assert_allclose(np.diag(R), 1.0)
        np.testing.assert_allclose(R, R.conj().T, atol=0)
        assert np.linalg.eigvalsh(R).min() >= -1e-10
        assert np.trace(R).real == pytest.approx(4.0)

    def test_zero_spread_is_steering_outer_product(self):
        R = correlation_matrix(TerrestrialChannelSpec(4, 40.0, 0.0))
        m = np.arange(4)
        expect = np.exp(-2j * np.pi * np.subtract.outer(m, m) * 0.5 * np.sin(np.radians(40.0)))
        np.testing.assert_allclose(R, expect, atol=1e-14)
        assert np.linalg.matrix_rank(R, tol=1e-9) == 1

    def test_matches_numeric_average(self):
        spec = TerrestrialChannelSpec(3, 20.0, 5.0)
        R = correlation_matrix(spec)
        a = np.radians(np.linspace(15.0, 25.0, 200_001))
        lag = 2
        vals = np.exp(-2j * np.pi * lag * 0.5 * np.sin(a))
        avg = (vals[:-1] + vals[1:]).sum() / 2 / (a.size - 1)
        assert R[2, 0] == pytest.approx(avg, abs=1e-8)

    @pytest.mark.parametrize("spread", [1e-12, 6e-8, 1e-4])
    def test_tiny_spread_stays_psd(self, spread):
        R = correlation_matrix(TerrestrialChannelSpec(6, 58.0, spread, 1.0))
        assert np.linalg.eigvalsh(R).min() >= -1e-12
        np.testing.assert_allclose(R, correlation_matrix(TerrestrialChannelSpec(6, 58.0, 0.0, 1.0)), atol=1e-3)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.floats(-80, 80), st.floats(0, 30), st.floats(0.1, 1.0))
    def test_hermitian_psd_unit_diagonal(self, n, aod, spread, d):
        R = correlation_matrix(TerrestrialChannelSpec(n, aod, spread, d))
        assert np.allclose(R, R.conj().T, atol=1e-14)
        np.testing.assert_allclose(np.diag(R).real, 1.0)
        assert np.linalg.eigvalsh(R).min() >= -1e-9


class TestTerrestrialChannel:
    def test_identity_correlation_unit_variance(self, rng):
        g = sample_terrestrial_channel(TerrestrialChannelSpec(2, 0.0), 500_000, rng, np.eye(2))
        np.testing.assert_allclose(np.mean(np.abs(g) ** 2, axis=1), 1.0, rtol=0.01)

    def test_covariance_matches_r(self, rng):
        spec = TerrestrialChannelSpec(4, 40.0, 5.0)
        R = correlation_matrix(spec)
        g = sample_terrestrial_channel(spec, 500_000, rng, R)
        S = g @ g.conj().T / g.shape[1]
        assert np.linalg.norm(S - R) / np.linalg.norm(R) < 0.01

    def test_zero_columns(self, rng):
        g = sample_terrestrial_channel(TerrestrialChannelSpec(3, 0.0), 0, rng)
        assert g.shape == (3, 0)


class TestCsiError:
    def test_zero_radius(self, rng):
        x = cn(rng, 4)
        np.testing.assert_array_equal(apply_csi_error(x, 0.0, "boundary", rng), x)

    def test_boundary_norm(self, rng):
        x = cn(rng, 4, 2)
        for _ in range(20):
            y = apply_csi_error(x, 0.1, "boundary", rng)
            assert abs(np.linalg.norm(y - x) - 0.1) < 1e-12

    def test_interior_radius_law(self, rng):
        x = cn(rng, 4)
        d = sample_csi_errors(x, 0.1, 100_000, "interior", rng) - x
        r = np.linalg.norm(d, axis=1)
        assert r.max() <= 0.1
        k = x.size
        ks = stats.kstest(r, lambda t: np.clip(t / 0.1, 0, 1) ** (2 * k)).statistic
        assert ks < 0.01

    def test_single_draw_matches_law(self, rng):
        x = cn(rng, 2, 2)
        r = np.array([np.linalg.norm(apply_csi_error(x, 0.2, "interior", rng) - x) for _ in range(4000)])
        assert r.max() <= 0.2
        ks = stats.kstest(r, lambda t: np.clip(t / 0.2, 0, 1) ** (2 * x.size)).statistic
        assert ks < 0.03

    def test_batched_boundary(self, rng):
        x = cn(rng, 4, 2)
        d = sample_csi_errors(x, 0.05, 1000, "boundary", rng) - x
        np.testing.assert_allclose(np.linalg.norm(d.reshape(1000, -1), axis=1), 0.05, rtol=1e-12)

    def test_bad_inputs(self, rng):
        with pytest.raises(ValueError):
            apply_csi_error(np.ones(2), -0.1, "interior", rng)
        with pytest.raises(ValueError):
            apply_csi_error(np.ones(2), 0.1, "sideways", rng)


class TestChannelSet:
    def test_draw_shapes(self, rng):
        ch = draw_channel_set(default_links(4, 4), 4, 2, rng)
        assert (ch.n_t, ch.n_s, ch.n_r) == (4, 4, 2)
        assert ch.H_e.shape == (4, 2) and ch.G_e.shape == (4, 2)

    def test_dimension_checks(self):
        with pytest.raises(ValueError):
            ChannelSet(h_p=np.ones(3), h_s=np.ones(2), H_e=np.ones((3, 1)), g_p=np.ones(2), g_s=np.ones(2),
                       G_e=np.ones((2, 1)))
        with pytest.raises(ValueError):
            ChannelSet(h_p=np.ones(2), h_s=np.ones(2), H_e=np.ones((2, 2)), g_p=np.ones(2), g_s=np.ones(2),
                       G_e=np.ones((2, 1)))
        with pytest.raises(ValueError):
            ChannelSet(h_p=[np.nan], h_s=[1], H_e=[[1]], g_p=[1], g_s=[1], G_e=[[1]])

    def test_robust_spec_around(self, rng):
        ch = draw_channel_set(default_links(4, 4), 4, 2, rng)
        spec = RobustSpec.around(ch, 0.05)
        assert spec.eps_e == 0.05
        np.testing.assert_array_equal(spec.nominal_G_e, ch.G_e)
        with pytest.raises(ValueError):
            RobustSpec.around(ch, -0.1)

    def test_same_seed_same_draw(self):
        a = draw_channel_set(default_links(), 4, 2, np.random.default_rng(7))
        b = draw_channel_set(default_links(), 4, 2, np.random.default_rng(7))
        for k in ("h_p", "h_s", "H_e", "g_p", "g_s", "G_e"):
            np.testing.assert_array_equal(getattr(a, k), getattr(b, k))
