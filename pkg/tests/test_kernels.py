import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from roughpam.errors import ParameterError, SingularEvaluationError, TableRangeError
from roughpam.kernels import (
    Constant,
    PairedCovariance,
    RegularizedSpaceKernel,
    RieszTime,
    SpaceSpectralDensity,
    SumKernel,
    admissible,
    eval_regularized_kernel,
    eval_space_density,
    eval_time_kernel,
    riesz_normalization,
    smoothed_time_kernel,
)


def quad_factor(a, eps, x):
    """Oracle for g_{a,eps}(x) = 2 int_0^inf cos(x xi) exp(-eps xi^2) xi^(a-1) d xi."""
    # integrable xi^(a-1) singularity on [0, 1] through the algebraic weight
    g = lambda xi: math.exp(-eps * xi * xi) * math.cos(x * xi)
    head = integrate.quad(g, 0, 1, weight="alg", wvar=(a - 1.0, 0.0), epsabs=0, epsrel=1e-13)[0]
    f = lambda xi: math.exp(-eps * xi * xi) * xi ** (a - 1.0)
    cut = math.sqrt(80.0 / eps)
    if x == 0:
        tail = integrate.quad(f, 1, cut, epsabs=0, epsrel=1e-13, limit=400)[0]
    else:
        tail = integrate.quad(f, 1, cut, weight="cos", wvar=x, limit=800, epsabs=1e-13)[0]
    return 2 * (head + tail)


class TestSpaceDensity:
    def test_examples(self):
        assert eval_space_density(SpaceSpectralDensity((1.5,), 1.0), np.array([4.0])) == pytest.approx(2.0)
        assert eval_space_density(SpaceSpectralDensity((1.5,), 1.0), np.array([1.0])) == pytest.approx(1.0)
        q = SpaceSpectralDensity((1.2, 0.5), 2.0)
        assert eval_space_density(q, np.array([2.0, 4.0])) == pytest.approx(2 * 2**0.2 * 4**-0.5, rel=1e-12)
        assert 2 * 2**0.2 * 4**-0.5 == pytest.approx(1.1487, abs=1e-4)

    def test_zero_coordinate(self):
        q = SpaceSpectralDensity((1.2, 0.5), 1.0)
        assert eval_space_density(q, np.array([0.0, 1.0])) == 0.0
        with pytest.raises(SingularEvaluationError):
            eval_space_density(q, np.array([1.0, 0.0]))

    def test_dimension_mismatch(self):
        with pytest.raises(RoughPamErrorAlias):
            eval_space_density(SpaceSpectralDensity((1.2, 0.5)), np.array([1.0, 2.0, 3.0]))

    @pytest.mark.parametrize("alphas", [(0.9,), (1.5, 0.6), (1.2, -0.1)])
    def test_invalid(self, alphas):
        with pytest.raises(ParameterError):
            SpaceSpectralDensity(alphas)

    def test_alpha_total(self):
        q = SpaceSpectralDensity((1.1, 0.3, 0.2))
        assert q.alpha_total == pytest.approx(1.6, abs=1e-15)


from roughpam.errors import RoughPamError as RoughPamErrorAlias  # noqa: E402


class TestTimeKernel:
    def test_examples(self):
        assert eval_time_kernel(Constant(1.0), 7.3) == 1.0
        assert eval_time_kernel(RieszTime(1.0, 0.5), 4.0) == pytest.approx(0.5)
        k = SumKernel((Constant(1.0), RieszTime(2.0, 0.25)))
        assert eval_time_kernel(k, 16.0) == pytest.approx(2.0)
        assert k.alpha0_effective == 0.25

    def test_singular(self):
        with pytest.raises(SingularEvaluationError):
            eval_time_kernel(RieszTime(1.0, 0.5), 0.0)

    def test_invalid_alpha0(self):
        with pytest.raises(ParameterError):
            RieszTime(1.0, 1.2)

    def test_riesz_normalization_fourier_pair(self):
        # |t|^-a0 = 2 int_0^inf cos(t eta) k eta^(a0-1) d eta at t = 1.7
        a0, t = 0.3, 1.7
        k = riesz_normalization(a0)
        head = integrate.quad(lambda e: math.cos(t * e), 0, 1, weight="alg", wvar=(a0 - 1, 0))[0]
        tail = integrate.quad(lambda e: e ** (a0 - 1), 1, np.inf, weight="cos", wvar=t)[0]
        val = 2 * k * (head + tail)
        assert val == pytest.approx(t**-a0, rel=1e-6)

    def test_smoothed_constant(self):
        assert smoothed_time_kernel(Constant(2.5), 0.3, 1.1) == pytest.approx(2.5)

    def test_smoothed_riesz_at_zero_matches_quadrature(self):
        a0, dl = 0.5, 0.1
        # (h * h(-.)) is the triangle (delta - |u|)_+ / delta^2
        f = lambda u: abs(u) ** -a0 * (dl - abs(u)) / dl**2
        oracle = 2 * integrate.quad(f, 0, dl, epsabs=0, epsrel=1e-12)[0]
        assert smoothed_time_kernel(RieszTime(1.0, a0), dl, 0.0) == pytest.approx(oracle, rel=1e-6)

    def test_smoothed_riesz_limit(self):
        assert smoothed_time_kernel(RieszTime(1.0, 0.5), 1e-4, 1.0) == pytest.approx(1.0, abs=1e-3)

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.floats(-3, 3), min_size=2, max_size=8),
        st.floats(0.05, 0.95),
        st.floats(0.01, 0.5),
        st.integers(0, 2**31),
    )
    def test_smoothed_positive_definite(self, times, a0, dl, seed):
        k = SumKernel((Constant(0.5), RieszTime(1.0, a0)))
        t = np.asarray(times)
        c = np.random.default_rng(seed).standard_normal(t.size)
        m = np.asarray(smoothed_time_kernel(k, dl, t[:, None] - t[None, :]))
        assert c @ m @ c >= -1e-9 * np.sum(c * c)


class TestPairing:
    def test_rejects_exactly_incompatible(self):
        space = SpaceSpectralDensity((1.5,))
        assert PairedCovariance(space, RieszTime(1.0, 0.2)).d == 1
        with pytest.raises(ParameterError):
            PairedCovariance(space, RieszTime(1.0, 0.3))

    @settings(max_examples=60, deadline=None)
    @given(st.floats(1.01, 1.95), st.floats(0.01, 0.99))
    def test_pure_function(self, a1, a0):
        space = SpaceSpectralDensity((a1,))
        ok = admissible((a1,), a0)
        assert ok == (a1 < 2 * (1 - a0))
        if ok:
            PairedCovariance(space, RieszTime(1.0, a0))
        else:
            with pytest.raises(ParameterError):
                PairedCovariance(space, RieszTime(1.0, a0))


class TestRegularizedKernel:
    def test_value_at_zero(self):
        k = RegularizedSpaceKernel(SpaceSpectralDensity((1.5,)), 0.01)
        ref = special.gamma(0.75) * 0.01**-0.75
        assert ref == pytest.approx(38.749, rel=1e-4)
        assert float(eval_regularized_kernel(k, np.array([0.0]))) == pytest.approx(ref, rel=1e-10)
        assert quad_factor(1.5, 0.01, 0.0) == pytest.approx(ref, rel=1e-8)

    def test_even(self):
        k = RegularizedSpaceKernel(SpaceSpectralDensity((1.3, 0.4)), 0.05)
        x = np.array([[0.37, -1.2], [-0.37, 1.2]])
        v = k(x)
        assert v[0] == v[1]

    def test_two_dim_product_of_oracles(self):
        k = RegularizedSpaceKernel(SpaceSpectralDensity((1.2, 0.5)), 0.05)
        ref = quad_factor(1.2, 0.05, 0.3) * quad_factor(0.5, 0.05, 0.7)
        assert float(k(np.array([0.3, 0.7]))) == pytest.approx(ref, rel=1e-6)

    @pytest.mark.parametrize("j,x", [(0, 0.05), (0, 0.8), (0, 2.5), (1, 1.4), (1, 0.02)])
    def test_table_vs_oracle(self, j, x):
        q = SpaceSpectralDensity((1.3, 0.5))
        k = RegularizedSpaceKernel(q, 0.1)
        ref = quad_factor(q.alphas[j], 0.1, x)
        peak = quad_factor(q.alphas[j], 0.1, 0.0)
        # PCHIP tolerance is stated against the peak value g(0)
        assert abs(float(k.factor(j, x)) - ref) <= 1e-6 * peak

    def test_range_refused(self):
        k = RegularizedSpaceKernel(SpaceSpectralDensity((1.3,)), 0.1)
        with pytest.raises(TableRangeError):
            k(np.array([2e3]))

    def test_zero_is_maximum_and_decreasing_in_eps(self):
        q = SpaceSpectralDensity((1.3,))
        k = RegularizedSpaceKernel(q, 0.1)
        xs = np.linspace(-5, 5, 201)[:, None]
        assert np.max(k(xs)) <= k.at_zero() * (1 + 1e-12)
        vals = [q.regularized_variance(e) for e in (0.01, 0.1, 1.0)]
        assert vals[0] > vals[1] > vals[2]

    def test_refinement_stable(self):
        k = RegularizedSpaceKernel(SpaceSpectralDensity((1.3,)), 0.1)
        probe = np.geomspace(1e-3, 50, 97)
        fine = k.refined()
        assert np.max(np.abs(fine.factor(0, probe) - k.factor(0, probe))) / k.at_zero() < 1e-5
