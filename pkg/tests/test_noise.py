import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughpam.errors import BoxOverflowError, GridMismatchError, ParameterError
from roughpam.kernels import Constant, PairedCovariance, RieszTime, SpaceSpectralDensity
from roughpam.noise import (
    FrequencyGrid,
    SpaceTimeGrid,
    empirical_covariance,
    evaluate_noise,
    read_binary,
    spectral_weights,
    synthesize_noise,
    truncated_covariance_oracle,
    write_binary,
    zero_noise,
)

COV_C = PairedCovariance(SpaceSpectralDensity((1.3,)), Constant(1.0))
COV_R = PairedCovariance(SpaceSpectralDensity((1.3,)), RieszTime(1.0, 0.3))
GRID = SpaceTimeGrid(1.0, 11, (0.0,), (4.0,), (81,))
FREQ = FrequencyGrid(30.0, 300, (20.0,), (800,))


def test_frequency_grid_invariants():
    with pytest.raises(ParameterError):
        FrequencyGrid(1.0, 1, (1.0,), (4,))
    with pytest.raises(ParameterError):
        FrequencyGrid(-1.0, 4, (1.0,), (4,))
    e = FREQ.eta_edges()
    assert np.allclose(e, -e[::-1])


def test_constant_kernel_static_slices():
    nr = synthesize_noise(1, COV_C, 0.05, 0.1, GRID, FREQ)
    assert np.all(nr.values == nr.values[0][None])


def test_same_seed_identical_and_readonly():
    a = synthesize_noise(4, COV_R, 0.05, 0.1, GRID, FREQ)
    b = synthesize_noise(4, COV_R, 0.05, 0.1, GRID, FREQ)
    assert np.array_equal(a.values, b.values)
    assert np.all(np.isfinite(a.values))
    with pytest.raises(ValueError):
        a.values[0, 0] = 1.0


def test_nyquist_refused():
    coarse = SpaceTimeGrid(1.0, 11, (0.0,), (4.0,), (9,))
    with pytest.raises(ParameterError):
        synthesize_noise(1, COV_C, 0.05, 0.1, coarse, FREQ)


def test_lag_zero_variance_constant_kernel():
    grid = SpaceTimeGrid(1.0, 1, (0.0,), (4.0,), (81,))
    reals = [synthesize_noise(2, COV_C, 0.05, 0.1, grid, FREQ, index=i) for i in range(200)]
    est, se = empirical_covariance(reals, 0, [0])
    oracle = truncated_covariance_oracle(COV_C, 0.05, 0.1, FREQ, 0.0, [0.0])
    assert abs(est - oracle) < 0.1 * oracle
    assert abs(est - oracle) < 3 * se


def test_captured_fraction_monotone():
    fr = [spectral_weights(COV_R, 0.05, 0.1, FrequencyGrid(c, 200, (x,), (400,))).captured_fraction
          for c, x in [(5.0, 5.0), (20.0, 10.0), (60.0, 20.0)]]
    assert fr[0] <= fr[1] <= fr[2] <= 1.0


class TestEvaluate:
    nr = synthesize_noise(3, COV_R, 0.05, 0.1, GRID, FREQ)

    def test_nodes_exact(self):
        g = self.nr.grid
        assert evaluate_noise(self.nr, g.times[3], g.axis(0)[17]) == self.nr.values[3, 17]

    def test_midpoint(self):
        g = self.nr.grid
        x = 0.5 * (g.axis(0)[17] + g.axis(0)[18])
        v = evaluate_noise(self.nr, g.times[3], x)
        assert v == pytest.approx(0.5 * (self.nr.values[3, 17] + self.nr.values[3, 18]), rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(0.0, 4.0))
    def test_convex(self, s, x):
        g = self.nr.grid
        i = min(int(s / g.dt), g.time_nodes - 2)
        j = min(int(x / g.spacing(0)), g.space_nodes[0] - 2)
        corners = self.nr.values[i : i + 2, j : j + 2]
        v = evaluate_noise(self.nr, s, x)
        assert corners.min() - 1e-12 <= v <= corners.max() + 1e-12

    def test_out_of_box(self):
        with pytest.raises(BoxOverflowError):
            evaluate_noise(self.nr, 0.5, 4.5)


def test_empirical_covariance_errors():
    a = synthesize_noise(1, COV_R, 0.05, 0.1, GRID, FREQ)
    other = SpaceTimeGrid(1.0, 11, (0.0,), (4.0,), (41,))
    b = synthesize_noise(1, COV_R, 0.05, 0.1, other, FrequencyGrid(30.0, 300, (20.0,), (800,)))
    with pytest.raises(GridMismatchError):
        empirical_covariance([a, b], 0, [0])
    with pytest.raises(ParameterError):
        empirical_covariance([a, a], 0, [81])
    est, _ = empirical_covariance([a, a], 0, [0])
    assert est == pytest.approx(np.mean(a.values**2))


def test_stationary_and_symmetric():
    reals = [synthesize_noise(6, COV_R, 0.05, 0.1, GRID, FREQ, index=i) for i in range(100)]
    left = np.array([np.mean(r.values[:, 10:30] * r.values[:, 12:32]) for r in reals])
    right = np.array([np.mean(r.values[:, 50:70] * r.values[:, 52:72]) for r in reals])
    diff = left - right
    assert abs(diff.mean()) < 3 * diff.std(ddof=1) / math.sqrt(diff.size)
    marg = np.array([r.values[5, 40] for r in reals])
    skew = np.mean((marg - marg.mean()) ** 3) / marg.std() ** 3
    assert abs(skew) < 3 * math.sqrt(6 / marg.size)


def test_binary_roundtrip():
    a = synthesize_noise(1, COV_R, 0.05, 0.1, GRID, FREQ)
    buf = io.BytesIO()
    write_binary(a, buf)
    buf.seek(0)
    b = read_binary(buf)
    assert b.grid == a.grid and np.array_equal(b.values, a.values) and b.seed == a.seed


def test_zero_noise():
    z = zero_noise(GRID)
    assert evaluate_noise(z, 0.3, 1.7) == 0.0
