import math

import numpy as np
import pytest
from scipy import integrate

from roughpam.errors import ParameterError
from roughpam.kernels import Constant, PairedCovariance, RieszTime, SpaceSpectralDensity
from roughpam.localization import (
    LocalizedDensity,
    LocalizerSpec,
    d_exact,
    domination_constant,
    fejer,
    fejer_hat,
    fejer_moment,
    localization_error_spectrum,
    localized_density,
    localized_fk_study,
    localized_sqrt_density,
    time_spectral_factor,
)

SPACE = SpaceSpectralDensity((1.3,))
COV = PairedCovariance(SPACE, Constant(1.0))


class TestFejer:
    def test_values(self):
        assert fejer(0.0) == pytest.approx(1 / (2 * math.pi), abs=1e-12)
        assert fejer_hat(0.0) == 1.0
        x = 2.7
        assert fejer(x) == pytest.approx((1 - math.cos(x)) / (math.pi * x * x), rel=1e-12)

    def test_support(self):
        xi = np.linspace(-3, 3, 6001)
        h = fejer_hat(xi)
        assert np.all(h[np.abs(xi) > 1] == 0.0) and np.all(h[np.abs(xi) < 1] > 0)
        spec = LocalizerSpec(8.0)
        assert spec.window_hat(8.0) == 0.0 and spec.window_hat(7.99) > 0 and spec.window_hat(8.01) == 0.0

    def test_integral(self):
        core, _ = integrate.quad(fejer, -1e4, 1e4, limit=20000)
        # tail beyond 1e4 is bounded by 2 * 2 / (pi * 1e4)
        assert abs(core - 1.0) < 1e-4 + 4 / (math.pi * 1e4)

    def test_bad_b(self):
        with pytest.raises(ParameterError):
            LocalizerSpec(1.0)

    @pytest.mark.parametrize("e", [-0.3, 0.15, 0.45])
    def test_moment_oracle(self, e):
        f = lambda u: 2 * u**e * fejer(u)
        v = integrate.quad(f, 0, 1)[0] + integrate.quad(f, 1, 200, limit=2000)[0]
        tail = 2 * integrate.quad(lambda u: u ** (e - 2) / math.pi, 200, np.inf)[0]
        # the oscillating part of the tail beyond 200 is below 2 * 200^(e-2)
        assert fejer_moment(e) == pytest.approx(v + tail, abs=3 * 200 ** (e - 2))


class TestLocalizedDensity:
    def test_factor_at_zero(self):
        ld = LocalizedDensity(SPACE, LocalizerSpec(8.0))
        e = 0.15
        assert ld.factor(0, 0.0) == pytest.approx(8.0 ** (-e) * fejer_moment(e), rel=1e-8)

    @pytest.mark.parametrize("z", [0.5, 3.0, 40.0])
    def test_table_vs_exact(self, z):
        ld = LocalizedDensity(SPACE, LocalizerSpec(10.0))
        e = 0.15
        direct = z**e + 10.0 ** (-e) * d_exact(e, 10.0 * z)
        assert ld.factor(0, z) == pytest.approx(direct, rel=1e-4)
        fine = LocalizedDensity(SPACE, LocalizerSpec(10.0), per_decade=48)
        assert abs(fine.factor(0, z) - direct) <= abs(ld.factor(0, z) - direct) + 1e-9

    def test_factor_vs_direct_convolution(self):
        ld = LocalizedDensity(SPACE, LocalizerSpec(4.0))
        xi, e, b = 1.5, 0.15, 4.0
        f = lambda y: abs(xi - y) ** e * ld.spec.window(y)
        pts = [xi]
        v = integrate.quad(f, -60, 60, points=pts, limit=5000)[0]
        tail = 2 * integrate.quad(lambda y: y**e / (math.pi * b * y * y), 60, np.inf)[0]
        assert ld.factor(0, xi) == pytest.approx(v + tail, rel=2e-3)

    def test_limit_b_large(self):
        ld = LocalizedDensity(SPACE, LocalizerSpec(1e3))
        assert localized_density(ld, 2.0) / SPACE(np.array([2.0])) == pytest.approx(1.0, rel=0.05)

    def test_finite_at_zero_and_nonnegative(self):
        ld = LocalizedDensity(SpaceSpectralDensity((1.3, 0.5)), LocalizerSpec(8.0))
        g = np.linspace(-5, 5, 41)
        pts = np.stack(np.meshgrid(g, g), axis=-1)
        v = localized_density(ld, pts)
        assert np.all(np.isfinite(v)) and np.all(v >= 0)
        assert math.isfinite(localized_sqrt_density(ld, np.array([0.0, 1.0])))

    def test_domination_stable(self):
        ld = LocalizedDensity(SpaceSpectralDensity((1.3, 0.5)), LocalizerSpec(8.0))
        rng = np.random.default_rng(0)
        a = domination_constant(ld, rng.uniform(-20, 20, (100, 2)))
        b = domination_constant(ld, rng.uniform(-20, 20, (100, 2)))
        assert math.isfinite(a) and 0.5 < a / b < 2.0

    def test_converges_pointwise(self):
        xi = np.array([0.7, 2.0, 5.0])
        q = SPACE(xi[:, None])
        errs = [np.max(np.abs(localized_density(LocalizedDensity(SPACE, LocalizerSpec(b)), xi) / q - 1))
                for b in (4.0, 32.0, 256.0)]
        assert errs[0] > errs[1] > errs[2]


class TestSpectrum:
    def test_time_factor_oracle(self):
        for t, xi in [(1.0, 0.3), (1.0, 4.0), (2.0, 1.5)]:
            k = xi * xi / 2
            # the double integral over the square reduces to the lag u = |s - r|
            ref = 2 * integrate.quad(lambda u: (t - u) * math.exp(-u * k), 0, t)[0]
            assert float(time_spectral_factor(Constant(1.0), t, xi * xi)) == pytest.approx(ref, rel=1e-6)
        rk = RieszTime(1.0, 0.3)
        k = 0.5
        ref = 2 * integrate.quad(lambda u: (1 - u) * u**-0.3 * math.exp(-u * k), 0, 1)[0]
        assert float(time_spectral_factor(rk, 1.0, 1.0)) == pytest.approx(ref, rel=1e-6)

    def test_monotone_and_slope(self):
        bs = [2.0, 8.0, 32.0, 128.0]
        v = [localization_error_spectrum(COV, LocalizerSpec(b), 1.0) for b in bs]
        assert all(a > b for a, b in zip(v, v[1:]))
        slope = np.polyfit(np.log(bs), np.log(v), 1)[0]
        assert slope < 0

    def test_t_scaling(self):
        spec = LocalizerSpec(8.0)
        ld = LocalizedDensity(SPACE, spec)

        def oracle(t):
            f = lambda xi: 2 * float(time_spectral_factor(Constant(1.0), t, xi * xi)) * ld.gap_factor(0, xi) ** 2
            return sum(integrate.quad(f, a, b, limit=500)[0]
                       for a, b in [(0, 1e-3), (1e-3, 1), (1, 8), (8, 100), (100, 1e4), (1e4, np.inf)])

        r = localization_error_spectrum(COV, spec, 2.0) / localization_error_spectrum(COV, spec, 1.0)
        assert r == pytest.approx(oracle(2.0) / oracle(1.0), rel=1e-4)

    def test_two_dimensional(self):
        cov = PairedCovariance(SpaceSpectralDensity((1.3, 0.5)), Constant(1.0))
        a = localization_error_spectrum(cov, LocalizerSpec(4.0), 1.0, per_decade=4, order=10)
        b = localization_error_spectrum(cov, LocalizerSpec(16.0), 1.0, per_decade=4, order=10)
        assert a > b > 0

    @pytest.mark.parametrize("alpha,b", [(1.0546875, 2.0), (1.6, 5.0), (1.9, 20.0)])
    def test_nonincreasing(self, alpha, b):
        cov = PairedCovariance(SpaceSpectralDensity((alpha,)), Constant(1.0))
        lo = localization_error_spectrum(cov, LocalizerSpec(b), 1.0, per_decade=4, order=10)
        hi = localization_error_spectrum(cov, LocalizerSpec(2 * b), 1.0, per_decade=4, order=10)
        assert hi <= lo


class TestLocalizedFk:
    def test_theta_zero(self):
        res = localized_fk_study(COV, [8.0], 1.0, 0.0, 0.1, 200, 0)
        assert res[0].gap == 0.0

    def test_gap_decreasing_and_slope(self):
        bs = [8.0, 64.0, 512.0]
        res = localized_fk_study(COV, bs, 1.0, 0.5, 0.1, 1000, 7)
        gaps = [r.gap for r in res]
        assert gaps[0] > gaps[1] > gaps[2] > 0
        for r in res:
            assert r.second_moment > 0 and r.cross_moment > 0 and r.second_moment_localized > 0
            assert r.cauchy_schwarz_ratio <= 1.0 + 1e-9
        fk_slope = np.polyfit(np.log(bs), np.log(gaps), 1)[0]
        sb = [2.0, 8.0, 32.0, 128.0]
        sv = [localization_error_spectrum(COV, LocalizerSpec(b), 1.0) for b in sb]
        sp_slope = np.polyfit(np.log(sb), np.log(sv), 1)[0]
        assert fk_slope <= sp_slope + 0.2

    def test_deterministic_workers(self):
        a = localized_fk_study(COV, [8.0, 64.0], 1.0, 0.5, 0.1, 400, 3, workers=1)
        b = localized_fk_study(COV, [8.0, 64.0], 1.0, 0.5, 0.1, 400, 3, workers=2)
        assert [r.to_dict() for r in a] == [r.to_dict() for r in b]
