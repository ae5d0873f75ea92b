"""Torus-arc overlap engine: exact arithmetic, unbiasedness, and scaling fits."""

import numpy as np
import pytest

from kanforget.errors import UsageError
from kanforget.montecarlo import (
    McConfig,
    dimension_scaling,
    fit_power_law,
    fragmentation_scaling,
    mc_expected_overlap,
    saturation_curve,
    torus_overlap,
)


def grid_overlap_oracle(a, b, points=200_000):
    """Dense-circle membership oracle for arc intersection measure."""
    zs = (np.arange(points) + 0.5) / points

    def inside(interval):
        start, length = interval
        rel = (zs - start) % 1.0
        return rel < length

    return float(np.mean(inside(a) & inside(b)))


class TestTorusOverlap:
    def test_identical_intervals(self):
        assert torus_overlap((0.2, 0.3), (0.2, 0.3)) == pytest.approx(0.3)

    def test_wrapping_hand_oracle(self):
        # Arc of length 0.2 from 0.95 wraps to [0.95,1) u [0,0.15); the
        # [0, 0.3) arc catches the wrapped part: overlap 0.15.
        assert torus_overlap((0.95, 0.2), (0.0, 0.3)) == pytest.approx(0.15)
        # Swapped lengths: [0,0.2) vs [0.95,1) u [0,0.25) overlaps 0.2.
        assert torus_overlap((0.0, 0.2), (0.95, 0.3)) == pytest.approx(0.2)

    def test_zero_length(self):
        assert torus_overlap((0.4, 0.0), (0.0, 0.8)) == 0.0

    def test_invalid_length(self):
        with pytest.raises(UsageError):
            torus_overlap((0.0, 1.2), (0.0, 0.5))
        with pytest.raises(UsageError):
            torus_overlap((0.0, 0.5), (0.0, -0.1))

    def test_against_dense_grid_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            a = (float(rng.random()), float(rng.random()))
            b = (float(rng.random()), float(rng.random()))
            exact = torus_overlap(a, b)
            approx = grid_overlap_oracle(a, b)
            assert abs(exact - approx) < 2e-5

    def test_full_circle(self):
        assert torus_overlap((0.3, 1.0), (0.7, 0.25)) == pytest.approx(0.25)


class TestMcExpectedOverlap:
    def test_matches_product_expectation(self):
        cfg = McConfig(trials=100_000, seed=5)
        res = mc_expected_overlap(0.2, 0.3, cfg)
        assert abs(res.mean - 0.06) <= 3 * res.std_error
        assert res.analytic_expectation == pytest.approx(0.06)

    def test_zero_length_exact(self):
        res = mc_expected_overlap(0.0, 0.5, McConfig(trials=1000, seed=1))
        assert res.mean == 0.0
        assert res.std_error == 0.0

    def test_full_lengths_exact(self):
        res = mc_expected_overlap(1.0, 1.0, McConfig(trials=1000, seed=1))
        assert res.mean == 1.0

    def test_seeded_determinism_bitwise(self):
        cfg = McConfig(trials=20_000, seed=9)
        a = mc_expected_overlap(0.25, 0.4, cfg)
        b = mc_expected_overlap(0.25, 0.4, cfg)
        assert a.mean == b.mean and a.std_error == b.std_error

    def test_unbiasedness_sweep(self):
        # Loose 4-sigma criterion over 100 independent experiments.
        passes = 0
        for seed in range(100):
            res = mc_expected_overlap(0.2, 0.3, McConfig(trials=2000, seed=seed))
            if abs(res.mean - 0.06) <= 4 * res.std_error:
                passes += 1
        assert passes >= 95

    def test_invalid_config(self):
        with pytest.raises(UsageError):
            McConfig(trials=0)


class TestSaturation:
    def test_full_circle_saturates_immediately(self):
        res = saturation_curve(0.4, [1.0, 1.0, 1.0], McConfig(trials=500, seed=2))
        np.testing.assert_allclose(res.mean_union, 0.4, atol=1e-12)
        assert res.plateau_onset == 1

    def test_zero_length_later_supports(self):
        res = saturation_curve(0.4, [0.0, 0.0], McConfig(trials=500, seed=2))
        np.testing.assert_array_equal(res.mean_union, 0.0)

    def test_matches_coverage_closed_form(self):
        # Mean union for equal arc lengths s: s_i * (1 - (1 - s)^T).
        s = 0.3
        t_max = 50
        cfg = McConfig(trials=4000, seed=7)
        res = saturation_curve(s, [s] * t_max, cfg)
        expected = s * (1.0 - (1.0 - s) ** res.task_counts)
        assert np.all(np.diff(res.mean_union) >= -1e-12)
        assert np.all(res.mean_union <= s + 1e-12)
        for t in range(t_max):
            # Deep in saturation the residual uncovered measure is a rare
            # event and the sample standard error underestimates; allow a
            # small absolute slack on top of the 3-sigma band.
            band = 3 * res.std_errors[t] + 1e-5
            assert abs(res.mean_union[t] - expected[t]) <= band, f"T={t + 1}"

    def test_monotone_and_bounded(self):
        res = saturation_curve(0.5, [0.2, 0.4, 0.1, 0.3], McConfig(trials=2000, seed=3))
        assert np.all(np.diff(res.mean_union) >= -1e-12)
        assert np.all(res.bound_slack >= -1e-12)

    def test_needs_later_tasks(self):
        with pytest.raises(UsageError):
            saturation_curve(0.3, [], McConfig(trials=10))


class TestPowerLawFit:
    def test_exact_square_law(self):
        x = np.array([0.05, 0.1, 0.2, 0.4])
        fit = fit_power_law(x, x**2)
        assert abs(fit.slope - 2.0) < 1e-10
        np.testing.assert_allclose(fit.residuals, 0.0, atol=1e-12)

    def test_exact_negative_exponent(self):
        x = np.array([1.0, 2.0, 4.0, 8.0])
        fit = fit_power_law(x, 3.0 * x**-1.5)
        assert abs(fit.slope + 1.5) < 1e-10

    def test_rejects_bad_input(self):
        with pytest.raises(UsageError):
            fit_power_law([1.0], [1.0])
        with pytest.raises(UsageError):
            fit_power_law([1.0, 2.0], [0.0, 1.0])


class TestDimensionScaling:
    def test_one_one_recovers_two(self):
        res = dimension_scaling(1, 1, [0.05, 0.1, 0.2, 0.4], McConfig(trials=20_000, seed=4))
        assert abs(res.fit.slope - 2.0) <= 0.15
        assert res.expected_slope == 2.0

    def test_two_three_recovers_five(self):
        res = dimension_scaling(
            2, 3, [0.1, 0.16, 0.25, 0.4], McConfig(trials=60_000, seed=4)
        )
        assert abs(res.fit.slope - 5.0) <= 0.3

    def test_sweep_validation(self):
        cfg = McConfig(trials=100)
        with pytest.raises(UsageError):
            dimension_scaling(1, 1, [0.1, 0.2, 0.3], cfg)
        with pytest.raises(UsageError):
            dimension_scaling(1, 1, [0.1, 0.2, 0.3, 1.0], cfg)
        with pytest.raises(UsageError):
            dimension_scaling(0, 1, [0.1, 0.2, 0.3, 0.4], cfg)


class TestFragmentationScaling:
    def test_slope_tracks_negative_dimension(self):
        res_i, res_j = fragmentation_scaling(
            2, 1, 0.3, [1, 2, 4, 8], McConfig(trials=30_000, seed=8)
        )
        assert abs(res_i.fit.slope + 2.0) <= 0.3
        assert abs(res_j.fit.slope + 1.0) <= 0.3

    def test_doubling_k_halves_overlap_for_d1(self):
        _, res_j = fragmentation_scaling(
            1, 1, 0.3, [1, 2], McConfig(trials=50_000, seed=11)
        )
        ratio = res_j.means[1] / res_j.means[0]
        se = res_j.means[1] / res_j.means[0] * (
            res_j.std_errors[0] / res_j.means[0] + res_j.std_errors[1] / res_j.means[1]
        )
        assert abs(ratio - 0.5) <= 3 * se

    def test_k_one_matches_dimension_model(self):
        # With k = 1 the fragmented lengths collapse to the r**d model.
        cfg = McConfig(trials=5000, seed=13)
        res_i, _ = fragmentation_scaling(2, 3, 0.25, [1, 2], cfg)
        direct = mc_expected_overlap(0.25**2, 0.25**3, cfg, _path=(0, 0))
        assert res_i.means[0] == direct.mean

    def test_validation(self):
        cfg = McConfig(trials=10)
        with pytest.raises(UsageError):
            fragmentation_scaling(1, 1, 0.3, [1], cfg)
        with pytest.raises(UsageError):
            fragmentation_scaling(1, 1, 1.5, [1, 2], cfg)
        with pytest.raises(UsageError):
            fragmentation_scaling(1, 1, 0.3, [0.5, 2], cfg)
