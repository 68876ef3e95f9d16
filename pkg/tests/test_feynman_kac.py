import math

import numpy as np
import pytest

from roughpam.errors import BoxOverflowError, GridMismatchError, GuardError, ParameterError
from roughpam.feynman_kac import (
    AffineShift,
    _pair_batch,
    girsanov_bridge_check,
    jensen_lower_bound,
    lattice_points,
    moment_curve,
    moment_mc,
    pair_interaction,
    pointwise_fk,
    slope_fit,
    spatial_max_profile,
    time_weight_matrix,
)
from roughpam.initial import Atoms, UnitConstant, heat_convolve, heat_kernel
from roughpam.kernels import Constant, PairedCovariance, RegularizedSpaceKernel, RieszTime, SpaceSpectralDensity
from roughpam.noise import FrequencyGrid, SpaceTimeGrid, synthesize_noise, zero_noise
from roughpam.paths import BridgeSpec, BrownianPath, PathGrid, pin_bridges, sample_bm, sample_bm_batch, sample_bridge

SPACE = SpaceSpectralDensity((1.3,))
COV = PairedCovariance(SPACE, Constant(1.0))
REG = RegularizedSpaceKernel(SPACE, 0.1)


class TestPairInteraction:
    def test_frozen_paths(self):
        g = PathGrid(2.0, 16)
        p = BrownianPath(g, np.zeros((17, 1)))
        v = pair_interaction(p, p, AffineShift.zero(1), Constant(1.0), REG)
        assert v == pytest.approx(4.0 * SPACE.regularized_variance(0.1), rel=1e-10)

    def test_swap_symmetry(self):
        g = PathGrid(1.0, 32)
        a = sample_bridge(1, g, BridgeSpec(1.0, np.zeros(1), np.zeros(1)), 0)
        b = sample_bridge(1, g, BridgeSpec(1.0, np.zeros(1), np.zeros(1)), 1)
        sh = AffineShift.for_pair(1.0, [0.2], [1.0], [-0.5])
        k = RieszTime(1.0, 0.3)
        assert pair_interaction(a, b, sh, k, REG) == pytest.approx(pair_interaction(b, a, sh.swapped(), k, REG),
                                                                    rel=1e-12)

    def test_grid_mismatch(self):
        a = sample_bm(1, PathGrid(1.0, 8), np.zeros(1))
        b = sample_bm(1, PathGrid(1.0, 16), np.zeros(1))
        with pytest.raises(GridMismatchError):
            pair_interaction(a, b, AffineShift.zero(1), Constant(1.0), REG)

    def test_coarse_vs_fine(self):
        fine = sample_bridge(3, PathGrid(1.0, 512), BridgeSpec(1.0, np.zeros(1), np.zeros(1)), 0)
        coarse = BrownianPath(PathGrid(1.0, 64), fine.positions[::8])
        ref = pair_interaction(fine, fine, AffineShift.zero(1), Constant(1.0), REG)
        val = pair_interaction(coarse, coarse, AffineShift.zero(1), Constant(1.0), REG)
        assert val == pytest.approx(ref, rel=0.02)

    @pytest.mark.parametrize("kernel", [Constant(1.0), RieszTime(1.0, 0.3)])
    def test_convergence_rate(self, kernel):
        fine = pin_bridges(sample_bm_batch(1, PathGrid(1.0, 256), 1, np.arange(200)), PathGrid(1.0, 256))
        vals = []
        for L in (32, 64, 128, 256):
            p = fine[:, :: 256 // L]
            vals.append(_pair_batch(p, p, time_weight_matrix(kernel, PathGrid(1.0, L)), REG))
        d = [np.mean(np.abs(vals[i + 1] - vals[i])) for i in range(3)]
        for r in (d[1] / d[0], d[2] / d[1]):
            assert 0.3 <= r <= 0.8


class TestMoments:
    def test_theta_zero_exact(self):
        u0 = Atoms(((1.0,), (-1.5,)), (1.0, 0.5))
        x = np.array([0.3])
        est = moment_curve([1, 2, 3], 1.0, x, u0, 0.0, 0.1, 10, 0, cov=COV, steps=8)
        h = heat_convolve(u0, 1.0, x)
        for e in est:
            assert e.value == pytest.approx(float(h) ** e.order, rel=1e-12) and e.standard_error == 0.0

    def test_jensen(self):
        est = moment_mc(1, 1.0, np.zeros(1), UnitConstant(), 0.5, 0.1, 2000, 1, cov=COV)
        jb = jensen_lower_bound(1.0, 0.5, COV, 0.1)
        assert est.value >= jb - 3 * est.standard_error

    def test_guards(self):
        with pytest.raises(GuardError):
            moment_mc(9, 1.0, np.zeros(1), UnitConstant(), 0.5, 0.1, 10, 1, cov=COV)
        many = Atoms(tuple((float(i),) for i in range(5)), (1.0,) * 5)
        with pytest.raises(GuardError):
            moment_mc(1, 1.0, np.zeros(1), many, 0.5, 0.1, 10, 1, cov=COV)

    def test_log_domain_large_exponent(self):
        est = moment_mc(4, 1.0, np.zeros(1), UnitConstant(), 3.0, 0.05, 200, 2, cov=COV, steps=16)
        assert math.isfinite(est.log_value) and est.log_value > 50


class TestGirsanov:
    def test_guard(self):
        with pytest.raises(GuardError):
            girsanov_bridge_check(5, 1.0, Constant(1.0), SPACE, 0.1, 10, 0)
        with pytest.raises(ParameterError):
            girsanov_bridge_check(1, 1.0, Constant(1.0), SPACE, 0.1, 10, 0, steps=15)

    def test_theta_monotone(self):
        lo = girsanov_bridge_check(1, 1.0, Constant(1.0), SPACE, 0.1, 500, 3, theta=0.5, steps=16)
        hi = girsanov_bridge_check(1, 1.0, Constant(1.0), SPACE, 0.1, 500, 3, theta=1.0, steps=16)
        assert hi.bridge_value >= lo.bridge_value and hi.bm_value >= lo.bm_value

    def test_supermultiplicative(self):
        one = girsanov_bridge_check(1, 1.0, Constant(1.0), SPACE, 0.1, 2000, 4, theta=0.5, steps=16)
        two = girsanov_bridge_check(2, 1.0, Constant(1.0), SPACE, 0.1, 2000, 4, theta=0.5, steps=16)
        se = math.hypot(two.bridge_se, 2 * one.bridge_value * one.bridge_se)
        assert two.bridge_value >= one.bridge_value**2 - 3 * se


def _static_noise(seed=1, half=20.0, eps=0.01):
    grid = SpaceTimeGrid(1.0, 1, (-half,), (half,), (int(2 * half / 0.05) + 1,))
    return synthesize_noise(seed, COV, eps, 0.1, grid, FrequencyGrid(1.0, 2, (math.pi / 0.05,), (4000,)))


class TestPointwise:
    def test_theta_zero_and_zero_noise(self):
        nr = _static_noise()
        d = Atoms.dirac(1)
        x = np.array([0.7])
        assert pointwise_fk(nr, 1.0, x, d, 0.0, 100, 0).value == heat_convolve(d, 1.0, x)
        z = zero_noise(nr.grid)
        est = pointwise_fk(z, 1.0, x, d, 0.8, 100, 0)
        assert est.value == heat_convolve(d, 1.0, x) and est.standard_error == 0.0

    def test_dirac_matches_pinned_estimator(self):
        nr = _static_noise()
        x = np.array([0.5])
        est = pointwise_fk(nr, 1.0, x, Atoms.dirac(1), 0.1, 4000, 2, steps=32)
        grid = PathGrid(1.0, 32)
        from roughpam.noise import evaluate_noise
        from roughpam.paths import trapezoid_weights
        w = trapezoid_weights(grid)
        vals = []
        for i in range(4000):
            p = sample_bridge(99, grid, BridgeSpec(1.0, x, np.zeros(1)), i).positions
            vals.append(math.exp(0.1 * float(evaluate_noise(nr, 1.0 - grid.times, p) @ w)))
        ref = np.mean(vals)
        se = np.std(vals, ddof=1) / math.sqrt(len(vals))
        ratio = est.value / heat_kernel(1.0, x)
        assert abs(float(ratio) - ref) < 3 * math.hypot(se, est.standard_error / float(heat_kernel(1.0, x)))

    def test_standard_error_scaling(self):
        nr = _static_noise()
        a = pointwise_fk(nr, 1.0, np.zeros(1), UnitConstant(), 0.3, 2000, 5)
        b = pointwise_fk(nr, 1.0, np.zeros(1), UnitConstant(), 0.3, 4000, 5)
        assert b.standard_error / a.standard_error == pytest.approx(1 / math.sqrt(2), rel=0.2)

    def test_box_overflow_and_horizon(self):
        nr = _static_noise(half=3.0)
        with pytest.raises(BoxOverflowError):
            pointwise_fk(nr, 1.0, np.array([2.9]), UnitConstant(), 0.3, 500, 5)
        with pytest.raises(GridMismatchError):
            pointwise_fk(nr, 2.0, np.zeros(1), UnitConstant(), 0.3, 50, 5)


class TestProfiles:
    nr = _static_noise(half=12.0)

    def test_singleton(self):
        prof = spatial_max_profile(self.nr, 1.0, 0.3, UnitConstant(), [0.0], 1.0, 300, 4)
        single = pointwise_fk(self.nr, 1.0, np.zeros(1), UnitConstant(), 0.3, 300, 4)
        assert prof[0].count == 1 and prof[0].log_max == pytest.approx(single.log_value, rel=1e-12)

    def test_nested_nondecreasing(self):
        prof = spatial_max_profile(self.nr, 1.0, 0.5, UnitConstant(), [0.5, 1.0, 2.0, 3.0], 4.0, 200, 4)
        lm = [p.log_max for p in prof]
        assert all(b >= a for a, b in zip(lm, lm[1:]))

    def test_theta_zero_unit(self):
        prof = spatial_max_profile(self.nr, 1.0, 0.0, UnitConstant(), [1.0, 2.0], 2.0, 10, 4)
        assert all(p.value == 1.0 for p in prof)

    def test_lattice(self):
        pts = lattice_points(2, 1.0, 2.0)
        assert len(pts) == 13 and np.all(np.linalg.norm(pts, axis=1) <= 1.0 + 1e-12)


class TestSlopeFit:
    def test_exact_line(self):
        xs = np.linspace(0, 5, 11)
        f = slope_fit(xs, 2 * xs + 1)
        assert f.slope == pytest.approx(2.0) and f.intercept == pytest.approx(1.0) and f.r_squared == 1.0

    def test_constant(self):
        assert slope_fit([1, 2, 3, 4], [5, 5, 5, 5]).slope == 0.0

    def test_noisy(self):
        rng = np.random.default_rng(0)
        xs = np.linspace(0, 1, 50)
        assert slope_fit(xs, 3 * xs + rng.normal(0, 0.01, 50)).slope == pytest.approx(3.0, abs=0.05)

    def test_degenerate(self):
        with pytest.raises(ParameterError):
            slope_fit([1, 1, 1], [1, 2, 3])
        with pytest.raises(ParameterError):
            slope_fit([1, 2], [1, 2])
