import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughpam.errors import ParameterError
from roughpam.experiments import CLASSIFIER_RADII
from roughpam.initial import (
    Atoms,
    Density,
    LogGrowth,
    UnitConstant,
    classify_case,
    heat_convolve,
    heat_kernel,
    nu,
    nu_k,
)


def test_heat_convolve_examples():
    assert heat_convolve(UnitConstant(), 0.7, np.array([3.0])) == 1.0
    d = Atoms.dirac(1)
    assert heat_convolve(d, 1.0, np.array([0.0])) == pytest.approx(0.3989423, abs=1e-7)
    assert heat_convolve(d, 1.0, np.array([2.0])) == pytest.approx(0.0539910, abs=1e-7)


def test_density_quadrature():
    box = Density(lambda y: (np.abs(y[..., 0]) <= 1.0).astype(float), 1.0, 1, True, (1.0,), "box")
    from scipy import special
    x = 0.4
    ref = 0.5 * (special.erf((1 - x) / math.sqrt(2)) + special.erf((1 + x) / math.sqrt(2)))
    assert heat_convolve(box, 1.0, np.array([x])) == pytest.approx(ref, rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 2.0), st.floats(0.1, 2.0), st.floats(-3.0, 3.0))
def test_semigroup(s, t, x):
    a = Atoms(((0.5,), (-1.0,)), (1.0, 0.3))
    smoothed = Density(lambda y: np.asarray(heat_convolve_vec(a, s, y)), 1.0 / math.sqrt(2 * math.pi * s), 1,
                       False, (), "p_s*u0")
    direct = heat_convolve(a, s + t, np.array([x]))
    assert heat_convolve(smoothed, t, np.array([x])) == pytest.approx(direct, rel=1e-6)
    assert direct > 0


def heat_convolve_vec(a, s, y):
    y = np.asarray(y)
    return sum(w * heat_kernel(s, y - np.asarray(p)) for p, w in zip(a.points, a.weights))


def test_classify_examples():
    assert classify_case(UnitConstant(), 1.0, 1.3, CLASSIFIER_RADII).verdict == "CaseI"
    assert classify_case(Atoms.dirac(1), 1.0, 1.3, CLASSIFIER_RADII).verdict == "CaseII"
    assert classify_case(LogGrowth(1), 1.0, 1.3, CLASSIFIER_RADII).verdict == "CaseI"


def test_classify_needs_decades():
    with pytest.raises(ParameterError):
        classify_case(UnitConstant(), 1.0, 1.3, [2.0, 4.0, 8.0])


def test_nu_examples():
    assert nu(UnitConstant(), 1.0, 5.0, 1) == 0.0
    assert nu(Atoms.dirac(1), 1.0, 2.0) == pytest.approx(2.0 + 0.5 * math.log(2 * math.pi), abs=1e-6)
    assert nu(Atoms.dirac(1), 1e-3, 1e-4) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 8.0), st.floats(1.0, 3.0))
def test_nu_k_clamp(R, k):
    v = nu_k(Atoms(((1.0,), (-2.0,)), (1.0, 0.5)), 1.0, R, k)
    assert v >= 0.0
