"""Spatial spectral density, temporal covariance kernels and their regularizations.

The noise covariance factorizes as ``gamma0(t - s) * gamma(x - y)`` where
``gamma`` is the Fourier transform of the product density

    q(xi) = C_q * prod_j |xi_j|**(alpha_j - 1)

and ``gamma0`` is a nonnegative positive-definite function of time. Fourier
transforms use the convention ``F f(xi) = int exp(i xi x) f(x) dx`` with no
``2 pi`` normalization, so ``gamma(0)`` regularized by ``exp(-eps |xi|^2)`` is
``C_q * prod_j Gamma(alpha_j / 2) * eps**(-alpha_j / 2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import mpmath
import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator

from .errors import (
    GridMismatchError,
    ParameterError,
    SingularEvaluationError,
    TableRangeError,
)

__all__ = [
    "SpaceSpectralDensity",
    "TimeKernel",
    "Constant",
    "RieszTime",
    "SumKernel",
    "PairedCovariance",
    "KernelTable1D",
    "RegularizedSpaceKernel",
    "eval_space_density",
    "eval_time_kernel",
    "eval_regularized_kernel",
    "smoothed_time_kernel",
    "riesz_normalization",
    "regularized_factor_exact",
    "TABLE_XMIN",
    "TABLE_XMAX",
]

TABLE_XMIN = 1e-6
TABLE_XMAX = 1e3


# ---------------------------------------------------------------------------
# spatial density


@dataclass(frozen=True)
class SpaceSpectralDensity:
    """Product power-law spectral density ``C_q prod |xi_j|^(alpha_j - 1)``."""

    alphas: tuple[float, ...]
    cq: float = 1.0
    alpha_total: float = field(init=False)

    def __post_init__(self):
        alphas = tuple(float(a) for a in np.atleast_1d(self.alphas))
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "cq", float(self.cq))
        if len(alphas) < 1:
            raise ParameterError("need at least one spatial dimension")
        if not alphas[0] > 1.0:
            raise ParameterError(f"alpha_1 must exceed 1 (rough coordinate), got {alphas[0]}")
        if any(not a > 0.0 for a in alphas):
            raise ParameterError(f"all alpha_j must be positive, got {alphas}")
        if not self.cq > 0.0:
            raise ParameterError(f"C_q must be positive, got {self.cq}")
        total = math.fsum(alphas)
        if not total < 2.0:
            raise ParameterError(f"alpha = sum(alpha_j) must be < 2, got {total}")
        object.__setattr__(self, "alpha_total", total)

    @property
    def d(self) -> int:
        return len(self.alphas)

    def __call__(self, xi):
        return eval_space_density(self, xi)

    def regularized_variance(self, epsilon: float) -> float:
        """``gamma_eps(0) = C_q prod Gamma(alpha_j/2) eps^(-alpha_j/2)``."""
        return self.cq * math.prod(
            special.gamma(a / 2.0) * epsilon ** (-a / 2.0) for a in self.alphas
        )


def eval_space_density(q: SpaceSpectralDensity, xi) -> np.ndarray | float:
    """Evaluate ``q(xi)``; ``xi`` has trailing dimension ``d``.

    A zero coordinate is a singularity when its ``alpha_j < 1`` and gives 0 when
    ``alpha_j > 1``.
    """
    xi = np.asarray(xi, dtype=float)
    scalar = xi.ndim <= 1
    xi = np.atleast_2d(xi)
    if xi.shape[-1] != q.d:
        raise ParameterError(f"xi has dimension {xi.shape[-1]}, density has d={q.d}")
    out = np.full(xi.shape[:-1], q.cq)
    for j, a in enumerate(q.alphas):
        comp = np.abs(xi[..., j])
        zero = comp == 0.0
        if a < 1.0 and np.any(zero):
            raise SingularEvaluationError(
                f"q is singular at xi_{j + 1} = 0 (alpha_{j + 1} = {a} < 1)"
            )
        with np.errstate(divide="ignore"):
            out = out * np.where(zero, 0.0 if a > 1.0 else 1.0, comp ** (a - 1.0))
    return float(out[0]) if scalar else out


def power_cell_mass(lo, hi, a: float):
    """Exact ``int_lo^hi |xi|^(a-1) dxi`` for arrays of intervals ``lo < hi``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    prim = lambda u: np.sign(u) * np.abs(u) ** a / a
    return prim(hi) - prim(lo)


def gaussian_power_cell_mass(lo, hi, a: float, epsilon: float):
    """Exact ``int_lo^hi exp(-eps xi^2) |xi|^(a-1) dxi`` via incomplete gamma."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    scale = 0.5 * special.gamma(a / 2.0) * epsilon ** (-a / 2.0)
    prim = lambda u: np.sign(u) * scale * special.gammainc(a / 2.0, epsilon * u * u)
    return prim(hi) - prim(lo)


# ---------------------------------------------------------------------------
# temporal kernels


def riesz_normalization(alpha0: float) -> float:
    """Constant ``k`` with ``|t|^-a0 = int exp(i t eta) k |eta|^(a0-1) d eta``."""
    return 1.0 / (2.0 * special.gamma(alpha0) * math.cos(math.pi * alpha0 / 2.0))


class TimeKernel:
    """Nonnegative positive-definite temporal covariance with explicit spectral measure.

    Subclasses provide the kernel, its box-smoothed version, and the spectral
    measure split into an atom at zero frequency plus a density.
    """

    alpha0_effective: float = 0.0

    def parts(self) -> tuple["TimeKernel", ...]:
        return (self,)

    @property
    def singular(self) -> bool:
        return self.alpha0_effective > 0.0

    def __call__(self, tau):
        raise NotImplementedError

    def smoothed(self, delta: float, tau):
        raise NotImplementedError

    def spectral_atom(self) -> float:
        return 0.0

    def spectral_density(self, eta):
        return np.zeros_like(np.asarray(eta, dtype=float))

    def spectral_mass(self, lo, hi):
        """Mass of the absolutely continuous part of mu_0 on ``[lo, hi]``."""
        return np.zeros(np.broadcast(np.asarray(lo), np.asarray(hi)).shape)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(TimeKernel):
    c: float = 1.0

    def __post_init__(self):
        if not self.c >= 0.0:
            raise ParameterError(f"constant time kernel needs c >= 0, got {self.c}")

    @property
    def alpha0_effective(self) -> float:
        return 0.0

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        out = np.full(tau.shape, self.c)
        return float(out) if out.ndim == 0 else out

    def smoothed(self, delta, tau):
        _check_delta(delta)
        return self(tau)

    def spectral_atom(self) -> float:
        return self.c

    def to_dict(self) -> dict:
        return {"type": "constant", "c": self.c}


@dataclass(frozen=True)
class RieszTime(TimeKernel):
    c: float = 1.0
    alpha0: float = 0.5

    def __post_init__(self):
        if not self.c > 0.0:
            raise ParameterError(f"Riesz time kernel needs c > 0, got {self.c}")
        if not 0.0 < self.alpha0 < 1.0:
            raise ParameterError(f"alpha0 must lie in (0, 1), got {self.alpha0}")

    @property
    def alpha0_effective(self) -> float:
        return self.alpha0

    @property
    def normalization(self) -> float:
        return riesz_normalization(self.alpha0)

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(tau == 0.0):
            raise SingularEvaluationError("Riesz time kernel is singular at tau = 0")
        out = self.c * np.abs(tau) ** (-self.alpha0)
        return float(out) if out.ndim == 0 else out

    def smoothed(self, delta, tau):
        """``(|.|^-a0 * T_delta)(tau)`` with the triangle ``T_delta = h_delta * h_delta(-.)``.

        Closed-form piecewise integration; far from the origin the two-term
        moment expansion avoids cancellation between the primitives.
        """
        _check_delta(delta)
        a = self.alpha0
        tau = np.asarray(tau, dtype=float)
        x = np.abs(tau)

        def f1(v):  # int_0^v |u|^-a du
            return np.sign(v) * np.abs(v) ** (1.0 - a) / (1.0 - a)

        def f2(v):  # int_0^v u |u|^-a du
            return np.abs(v) ** (2.0 - a) / (2.0 - a)

        exact = (
            (delta - x) * (f1(x) - f1(x - delta))
            + (f2(x) - f2(x - delta))
            + (delta + x) * (f1(x + delta) - f1(x))
            - (f2(x + delta) - f2(x))
        ) / delta**2
        far = x > 1e3 * delta
        with np.errstate(divide="ignore"):
            series = x ** (-a) * (1.0 + a * (a + 1.0) * delta**2 / (12.0 * x**2))
        out = self.c * np.where(far, series, exact)
        return float(out) if out.ndim == 0 else out

    def spectral_density(self, eta):
        eta = np.abs(np.asarray(eta, dtype=float))
        with np.errstate(divide="ignore"):
            return self.c * self.normalization * eta ** (self.alpha0 - 1.0)

    def spectral_mass(self, lo, hi):
        return self.c * self.normalization * power_cell_mass(lo, hi, self.alpha0)

    def to_dict(self) -> dict:
        return {"type": "riesz", "c": self.c, "alpha0": self.alpha0}


@dataclass(frozen=True)
class SumKernel(TimeKernel):
    terms: tuple[TimeKernel, ...] = ()

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ParameterError("sum kernel needs at least one term")
        flat: list[TimeKernel] = []
        for term in terms:
            if not isinstance(term, (Constant, RieszTime, SumKernel)):
                raise ParameterError(f"unsupported time kernel term {term!r}")
            flat.extend(term.parts())
        object.__setattr__(self, "terms", tuple(flat))

    def parts(self):
        return self.terms

    @property
    def alpha0_effective(self) -> float:
        return max(term.alpha0_effective for term in self.terms)

    def __call__(self, tau):
        return sum(term(tau) for term in self.terms)

    def smoothed(self, delta, tau):
        return sum(term.smoothed(delta, tau) for term in self.terms)

    def spectral_atom(self) -> float:
        return sum(term.spectral_atom() for term in self.terms)

    def spectral_density(self, eta):
        return sum(term.spectral_density(eta) for term in self.terms)

    def spectral_mass(self, lo, hi):
        return sum(term.spectral_mass(lo, hi) for term in self.terms)

    def to_dict(self) -> dict:
        return {"type": "sum", "terms": [term.to_dict() for term in self.terms]}


def _check_delta(delta):
    if not delta > 0.0:
        raise ParameterError(f"smoothing width delta must be positive, got {delta}")


def time_kernel_from_dict(block: dict) -> TimeKernel:
    kind = block.get("type", "constant").lower()
    if kind == "constant":
        return Constant(float(block.get("c", 1.0)))
    if kind == "riesz":
        return RieszTime(float(block.get("c", 1.0)), float(block["alpha0"]))
    if kind == "sum":
        return SumKernel(tuple(time_kernel_from_dict(b) for b in block["terms"]))
    raise ParameterError(f"unknown time kernel type {kind!r}")


def eval_time_kernel(k: TimeKernel, tau):
    return k(tau)


def smoothed_time_kernel(k: TimeKernel, delta: float, tau):
    return k.smoothed(delta, tau)


@dataclass(frozen=True)
class PairedCovariance:
    space: SpaceSpectralDensity
    time: TimeKernel

    def __post_init__(self):
        if not admissible(self.space.alphas, self.time.alpha0_effective):
            raise ParameterError(
                f"alpha = {self.space.alpha_total} violates alpha < 2(1 - alpha0) "
                f"with alpha0 = {self.time.alpha0_effective}"
            )

    @property
    def d(self) -> int:
        return self.space.d


def admissible(alphas: Sequence[float], alpha0: float) -> bool:
    """Compatibility ``sum(alphas) < 2 (1 - alpha0)``."""
    return math.fsum(alphas) < 2.0 * (1.0 - alpha0)


# ---------------------------------------------------------------------------
# regularized spatial kernel


def regularized_factor_exact(a: float, epsilon: float, x: float) -> float:
    """``int exp(i x xi - eps xi^2) |xi|^(a-1) d xi`` through Kummer's function."""
    z = mpmath.mpf(x) ** 2 / (4 * mpmath.mpf(epsilon))
    val = mpmath.gamma(a / 2) * mpmath.mpf(epsilon) ** (-a / 2) * mpmath.hyp1f1(a / 2, 0.5, -z)
    return float(val)


class KernelTable1D:
    """Even real function tabulated on log-spaced ``|x|`` with PCHIP in ``log|x|``.

    Between 0 and the first node the value is blended quadratically from the
    exact value at 0, consistent with a smooth even function.
    """

    def __init__(self, xs: np.ndarray, values: np.ndarray, value_at_zero: float):
        xs = np.asarray(xs, dtype=float)
        values = np.asarray(values, dtype=float)
        if xs.ndim != 1 or xs.shape != values.shape or np.any(np.diff(xs) <= 0):
            raise ParameterError("table abscissae must be strictly increasing and match values")
        self.xs = xs
        self.values = values
        self.value_at_zero = float(value_at_zero)
        self.x_min = float(xs[0])
        self.x_max = float(xs[-1])
        self._interp = PchipInterpolator(np.log(xs), values, extrapolate=False)

    def __call__(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        if np.any(ax > self.x_max * (1 + 1e-12)):
            raise TableRangeError(
                f"|x| = {float(np.max(ax)):.6g} exceeds table range {self.x_max:.6g}"
            )
        inner = ax < self.x_min
        with np.errstate(divide="ignore"):
            logs = np.log(np.clip(ax, self.x_min, self.x_max))
        out = self._interp(logs)
        if np.any(inner):
            frac = (ax / self.x_min) ** 2
            blend = self.value_at_zero + (self.values[0] - self.value_at_zero) * frac
            out = np.where(inner, blend, out)
        return float(out) if out.ndim == 0 else out

    def refined_difference(self, builder, probe: np.ndarray) -> float:
        """Max relative change at ``probe`` against a table of half the spacing."""
        fine = builder()
        scale = max(abs(self.value_at_zero), 1e-300)
        return float(np.max(np.abs(fine(probe) - self(probe))) / scale)


@lru_cache(maxsize=64)
def _factor_table(a: float, epsilon: float, per_decade: int) -> KernelTable1D:
    decades = math.log10(TABLE_XMAX / TABLE_XMIN)
    n = int(round(decades * per_decade)) + 1
    xs = np.logspace(math.log10(TABLE_XMIN), math.log10(TABLE_XMAX), n)
    mpmath.mp.dps = 20
    vals = np.array([regularized_factor_exact(a, epsilon, x) for x in xs])
    g0 = special.gamma(a / 2.0) * epsilon ** (-a / 2.0)
    return KernelTable1D(xs, vals, g0)


@dataclass(frozen=True)
class RegularizedSpaceKernel:
    """``gamma_eps(x) = C_q prod_j g_{alpha_j, eps}(x_j)`` from per-coordinate tables.

    Note that ``g_{a, eps}`` changes sign at large ``|x|`` when ``a > 1``: the
    rough coordinate's covariance is negative at long range.
    """

    density: SpaceSpectralDensity
    epsilon: float
    per_decade: int = 256
    tables: tuple[KernelTable1D, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        tables = tuple(
            _factor_table(a, float(self.epsilon), int(self.per_decade))
            for a in self.density.alphas
        )
        object.__setattr__(self, "tables", tables)

    @property
    def d(self) -> int:
        return self.density.d

    def __call__(self, x):
        return eval_regularized_kernel(self, x)

    def at_zero(self) -> float:
        return self.density.regularized_variance(self.epsilon)

    def factor(self, j: int, x):
        return self.tables[j](x)

    def refined(self) -> "RegularizedSpaceKernel":
        return RegularizedSpaceKernel(self.density, self.epsilon, 2 * self.per_decade)


def eval_regularized_kernel(k: RegularizedSpaceKernel, x, density: SpaceSpectralDensity | None = None):
    """Evaluate ``gamma_eps`` at points ``x`` with trailing dimension ``d``."""
    if density is not None and density != k.density:
        raise GridMismatchError("kernel table was built for a different spectral density")
    x = np.asarray(x, dtype=float)
    if k.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != k.d:
        raise ParameterError(f"x has dimension {x.shape[-1]}, kernel has d={k.d}")
    out = k.density.cq * k.tables[0](x[..., 0])
    for j in range(1, k.d):
        out = out * k.tables[j](x[..., j])
    return float(out) if np.ndim(out) == 0 else out
