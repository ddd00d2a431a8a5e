"""Tests for the LS + interpolation + two-channel + scaling front end.

The spline implementation is checked against two independent oracles: a
dense full-matrix solve of the natural-spline system evaluated in the
piecewise-polynomial basis, and scipy's CubicSpline with natural boundary
conditions (test-only dependency).
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline

from uwacsr.channel_model import EnvironmentConfig, realize_channel, sample_csi
from uwacsr.estimation import (
    DEFAULT_SCALING_FACTOR,
    from_two_channel,
    interpolate_time,
    ls_estimate,
    raw_estimate_pipeline,
    scale,
    to_two_channel,
    unscale,
)
from uwacsr.ofdm import (
    FOUR_PILOT_SYMBOLS,
    TWO_PILOT_SYMBOLS,
    OfdmConfig,
    all_ones_pilots,
    apply_channel,
    build_frame,
)


def dense_natural_spline(x, y, targets):
    """Full-matrix natural-spline oracle, evaluated in coefficient form."""
    p = x.size
    system = np.zeros((p, p))
    rhs = np.zeros(p, dtype=complex)
    system[0, 0] = system[-1, -1] = 1.0
    h = np.diff(x)
    for i in range(1, p - 1):
        system[i, i - 1] = h[i - 1]
        system[i, i] = 2.0 * (h[i - 1] + h[i])
        system[i, i + 1] = h[i]
        rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1])
    m = np.linalg.solve(system, rhs)

    out = np.empty(len(targets), dtype=complex)
    for n, t in enumerate(targets):
        j = min(max(np.searchsorted(x, t, side="right") - 1, 0), p - 2)
        dt = t - x[j]
        d = y[j]
        c = (y[j + 1] - y[j]) / h[j] - h[j] * (2.0 * m[j] + m[j + 1]) / 6.0
        b = m[j] / 2.0
        a = (m[j + 1] - m[j]) / (6.0 * h[j])
        out[n] = d + dt * (c + dt * (b + dt * a))
    return out


class TestLsEstimate:
    def test_hand_division(self):
        got = ls_estimate(np.array([[2.0 + 2.0j]]), np.array([[1.0 + 1.0j]]))
        assert got[0, 0] == pytest.approx(2.0 + 0.0j, abs=1e-15)

    def test_noise_free_identity(self):
        rng = np.random.default_rng(0)
        h = rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2))
        x = np.exp(1j * rng.uniform(0, 2 * np.pi, (8, 2)))
        np.testing.assert_allclose(ls_estimate(h * x, x), h, rtol=1e-13)

    def test_equal_grids_give_ones(self):
        x = np.full((4, 2), 0.6 - 0.8j)
        np.testing.assert_allclose(ls_estimate(x, x), 1.0, atol=1e-15)

    def test_rejects_zero_pilot(self):
        with pytest.raises(ValueError):
            ls_estimate(np.ones((2, 2), complex), np.array([[1.0, 0.0], [1.0, 1.0]], complex))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            ls_estimate(np.ones((2, 2), complex), np.ones((2, 3), complex))


class TestInterpolateTime:
    @pytest.mark.parametrize("indices", [TWO_PILOT_SYMBOLS, FOUR_PILOT_SYMBOLS])
    def test_constant_row(self, indices):
        c = 0.3 - 0.7j
        pilots = np.full((5, len(indices)), c)
        out = interpolate_time(pilots, indices, 16)
        np.testing.assert_allclose(out, c, atol=1e-13)

    @pytest.mark.parametrize("indices", [TWO_PILOT_SYMBOLS, FOUR_PILOT_SYMBOLS])
    def test_linear_in_time_is_exact_everywhere(self, indices):
        # includes the columns outside the outermost pilots
        rng = np.random.default_rng(1)
        intercept = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        slope = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        t = np.arange(16, dtype=float)
        truth = intercept[:, None] + slope[:, None] * t
        out = interpolate_time(truth[:, list(indices)], indices, 16)
        np.testing.assert_allclose(out, truth, atol=1e-12)

    def test_passes_through_every_knot(self):
        rng = np.random.default_rng(2)
        pilots = rng.standard_normal((8, 4)) + 1j * rng.standard_normal((8, 4))
        out = interpolate_time(pilots, FOUR_PILOT_SYMBOLS, 16)
        np.testing.assert_allclose(out[:, list(FOUR_PILOT_SYMBOLS)], pilots, atol=1e-13)

    def test_cubic_against_dense_solver(self):
        t = np.arange(16, dtype=float)
        truth = (t - 7.0) ** 3 + 1j * (0.5 * t**2 - t)
        knots = np.array(FOUR_PILOT_SYMBOLS, dtype=float)
        pilots = truth[list(FOUR_PILOT_SYMBOLS)][None, :]
        out = interpolate_time(pilots, FOUR_PILOT_SYMBOLS, 16)[0]
        oracle = dense_natural_spline(knots, pilots[0], t)
        np.testing.assert_allclose(out, oracle, atol=1e-10)
        # natural end conditions cannot reproduce a cubic exactly ...
        interior = slice(3, 14)
        assert np.max(np.abs(out[interior] - truth[interior])) > 1e-3
        # ... but the error stays modest relative to the curve itself
        assert np.max(np.abs(out - oracle)) < 1e-10

    def test_matches_scipy_natural_spline(self):
        rng = np.random.default_rng(3)
        indices = (2, 6, 10, 14)
        pilots = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
        out = interpolate_time(pilots, indices, 16)
        t = np.arange(16, dtype=float)
        for row in range(5):
            ref = CubicSpline(np.array(indices, float), pilots[row], bc_type="natural")
            np.testing.assert_allclose(out[row], ref(t), atol=1e-10)

    def test_three_pilots_fall_back_to_linear(self):
        pilots = np.array([[1.0 + 1.0j, 5.0 - 3.0j, 2.0 + 0.0j]])
        out = interpolate_time(pilots, (2, 8, 14), 16)
        np.testing.assert_allclose(out[0, 5], (pilots[0, 0] + pilots[0, 1]) / 2.0, atol=1e-13)
        np.testing.assert_allclose(out[0, 11], (pilots[0, 1] + pilots[0, 2]) / 2.0, atol=1e-13)
        # outside the pilots the boundary segment keeps its slope
        slope = (pilots[0, 1] - pilots[0, 0]) / 6.0
        np.testing.assert_allclose(out[0, 0], pilots[0, 0] - 2.0 * slope, atol=1e-13)

    def test_rejects_single_pilot(self):
        with pytest.raises(ValueError):
            interpolate_time(np.ones((2, 1), complex), (3,), 16)

    def test_rejects_unsorted_or_duplicate_indices(self):
        with pytest.raises(ValueError):
            interpolate_time(np.ones((2, 2), complex), (11, 3), 16)
        with pytest.raises(ValueError):
            interpolate_time(np.ones((2, 2), complex), (3, 3), 16)

    def test_rejects_out_of_range_indices(self):
        with pytest.raises(ValueError):
            interpolate_time(np.ones((2, 2), complex), (3, 16), 16)
        with pytest.raises(ValueError):
            interpolate_time(np.ones((2, 2), complex), (-1, 3), 16)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            interpolate_time(np.ones((2, 3), complex), (3, 11), 16)

    @settings(max_examples=40, deadline=None)
    @given(
        st.sets(st.integers(min_value=0, max_value=15), min_size=2, max_size=6),
        st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_linear_precision_for_any_pilot_set(self, index_set, coeff_seed):
        indices = tuple(sorted(index_set))
        rng = np.random.default_rng(coeff_seed)
        intercept = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        slope = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        t = np.arange(16, dtype=float)
        truth = intercept[:, None] + slope[:, None] * t
        out = interpolate_time(truth[:, list(indices)], indices, 16)
        np.testing.assert_allclose(out, truth, atol=1e-9)


class TestTwoChannel:
    def test_single_element(self):
        planes = to_two_channel(np.array([[1.0 + 2.0j]]))
        assert planes.shape == (2, 1, 1)
        assert planes[0, 0, 0] == 1.0
        assert planes[1, 0, 0] == 2.0

    def test_real_matrix_has_zero_imag_plane(self):
        planes = to_two_channel(np.array([[3.0, -1.0]], dtype=complex))
        assert np.all(planes[1] == 0.0)

    def test_round_trip_both_directions(self):
        rng = np.random.default_rng(4)
        h = rng.standard_normal((6, 5)) + 1j * rng.standard_normal((6, 5))
        np.testing.assert_array_equal(from_two_channel(to_two_channel(h)), h)
        t = rng.standard_normal((2, 6, 5))
        np.testing.assert_array_equal(to_two_channel(from_two_channel(t)), t)

    def test_frobenius_norm_preserved(self):
        rng = np.random.default_rng(5)
        h = rng.standard_normal((7, 3)) + 1j * rng.standard_normal((7, 3))
        assert np.sum(np.abs(h) ** 2) == pytest.approx(np.sum(to_two_channel(h) ** 2), rel=1e-13)

    def test_rejects_bad_tensor_shape(self):
        with pytest.raises(ValueError):
            from_two_channel(np.zeros((3, 4, 4)))
        with pytest.raises(ValueError):
            from_two_channel(np.zeros((2, 4)))


class TestScaling:
    def test_basic_values(self):
        np.testing.assert_allclose(scale(np.array([[0.01]]), 10.0), [[0.1]], rtol=1e-15)
        t = np.array([[0.3]])
        np.testing.assert_array_equal(scale(t, 1.0), t)

    def test_round_trip(self):
        rng = np.random.default_rng(6)
        t = rng.standard_normal((2, 4, 4))
        np.testing.assert_allclose(unscale(scale(t, DEFAULT_SCALING_FACTOR), DEFAULT_SCALING_FACTOR), t, rtol=1e-15)

    @pytest.mark.parametrize("factor", [0.0, -2.0])
    def test_rejects_nonpositive_factor(self, factor):
        with pytest.raises(ValueError):
            scale(np.ones((1, 1)), factor)
        with pytest.raises(ValueError):
            unscale(np.ones((1, 1)), factor)

    def test_commutes_with_two_channel_transform(self):
        rng = np.random.default_rng(7)
        h = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
        np.testing.assert_allclose(
            scale(to_two_channel(h), 10.0), to_two_channel(10.0 * h), rtol=1e-14
        )


class TestPipeline:
    def _frame_through(self, h, pattern, cfg, seed=0, snr_db=math.inf):
        frame = build_frame(cfg, pattern, seed=seed)
        y = apply_channel(frame, h, snr_db, seed=seed + 1)
        return frame.with_rx(y)

    def test_time_constant_channel_is_recovered_exactly(self):
        cfg = OfdmConfig(n_subcarriers=16, n_symbols_per_frame=16)
        pattern = all_ones_pilots(cfg, FOUR_PILOT_SYMBOLS)
        rng = np.random.default_rng(8)
        col = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        h = np.repeat(col[:, None], 16, axis=1)
        frame = self._frame_through(h, pattern, cfg)
        out = raw_estimate_pipeline(frame, pattern)
        np.testing.assert_allclose(out, scale(to_two_channel(h), 10.0), atol=1e-12)

    def test_time_linear_channel_two_pilots_exact(self):
        cfg = OfdmConfig(n_subcarriers=16, n_symbols_per_frame=16)
        pattern = all_ones_pilots(cfg, TWO_PILOT_SYMBOLS)
        rng = np.random.default_rng(9)
        intercept = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        slope = 0.05 * (rng.standard_normal(16) + 1j * rng.standard_normal(16))
        h = intercept[:, None] + slope[:, None] * np.arange(16)
        frame = self._frame_through(h, pattern, cfg)
        out = raw_estimate_pipeline(frame, pattern)
        np.testing.assert_allclose(out, scale(to_two_channel(h), 10.0), atol=1e-12)

    def test_noisy_pilot_columns_equal_raw_ls(self):
        # the interpolant passes through its knots, so at pilot columns the
        # pipeline output is exactly the noisy LS estimate
        cfg = OfdmConfig(n_subcarriers=16, n_symbols_per_frame=16)
        pattern = all_ones_pilots(cfg, FOUR_PILOT_SYMBOLS)
        env = EnvironmentConfig()
        h = sample_csi(realize_channel(env, 3), cfg.subcarrier_frequencies(), cfg.symbol_times())
        frame = self._frame_through(h, pattern, cfg, snr_db=5.0)
        out = from_two_channel(unscale(raw_estimate_pipeline(frame, pattern), 10.0))
        cols = list(FOUR_PILOT_SYMBOLS)
        expected = ls_estimate(frame.rx_symbols[:, cols], frame.tx_symbols[:, cols])
        np.testing.assert_allclose(out[:, cols], expected, atol=1e-12)

    def test_custom_scaling_factor(self):
        cfg = OfdmConfig(n_subcarriers=8, n_symbols_per_frame=16)
        pattern = all_ones_pilots(cfg, TWO_PILOT_SYMBOLS)
        h = np.ones((8, 16), dtype=complex)
        frame = self._frame_through(h, pattern, cfg)
        out1 = raw_estimate_pipeline(frame, pattern, factor=1.0)
        out5 = raw_estimate_pipeline(frame, pattern, factor=5.0)
        np.testing.assert_allclose(out5, 5.0 * out1, rtol=1e-14)

    def test_rejects_frame_without_rx(self):
        cfg = OfdmConfig(n_subcarriers=8, n_symbols_per_frame=16)
        pattern = all_ones_pilots(cfg, TWO_PILOT_SYMBOLS)
        frame = build_frame(cfg, pattern, seed=0)
        with pytest.raises(ValueError):
            raw_estimate_pipeline(frame, pattern)
