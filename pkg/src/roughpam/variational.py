"""Discretized variational constant ``E_t`` and the closed-form growth constants.

The functional on a profile ``g(s, x)`` (``s`` in ``[0, 1]``, unit ``L^2`` mass
per slice) is

    theta int int gamma_0((s - r) t) int F[g_s^2](xi) conj(F[g_r^2](xi)) q(xi) dxi ds dr
      - 1/2 int int |grad g_s|^2 dx ds.

Space is a periodic box ``[-A, A)^d`` with ``n`` nodes per axis; ``F`` is the
DFT scaled by ``h^d`` on the dual lattice of spacing ``2 pi / (n h)``, and each
dual cell carries its exact ``q``-mass. Time uses trapezoid weights on ``S``
nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .errors import ParameterError, SolverError
from .kernels import PairedCovariance, power_cell_mass
from .rng import STREAM_INIT, derive_rng

__all__ = [
    "ProfileGrid",
    "Discretization",
    "VariationalResult",
    "ScalingCheck",
    "LegendreCheck",
    "objective",
    "objective_and_gradient",
    "gaussian_profile",
    "random_profile",
    "maximize",
    "solve",
    "prescan_width",
    "objective_terms",
    "scaling_check",
    "small_t_check",
    "kappa",
    "legendre_consistency",
    "legendre_closed_form",
]

NORM_TOL = 1e-10


@dataclass(frozen=True)
class Discretization:
    """Grid of the variational problem: ``S`` time nodes, ``n`` nodes per axis on ``[-A, A)^d``."""

    S: int = 16
    n: int = 128
    A: float = 0.4
    d: int = 1

    def __post_init__(self):
        if self.S < 2 or self.n < 4 or self.n % 2 or not self.A > 0 or self.d < 1:
            raise ParameterError("need S >= 2, even n >= 4, A > 0, d >= 1")

    @property
    def h(self) -> float:
        return 2.0 * self.A / self.n

    @property
    def xi_cutoff(self) -> float:
        return math.pi / self.h

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.S)

    @property
    def time_weights(self) -> np.ndarray:
        w = np.full(self.S, 1.0 / (self.S - 1))
        w[0] = w[-1] = 0.5 / (self.S - 1)
        return w

    def axis(self) -> np.ndarray:
        return -self.A + self.h * np.arange(self.n)

    def refined(self) -> "Discretization":
        """Halve ``h`` and double ``A`` (four times the nodes per axis)."""
        return Discretization(self.S, 4 * self.n, 2.0 * self.A, self.d)

    def to_dict(self):
        return {"S": self.S, "n": self.n, "A": self.A, "d": self.d, "h": self.h, "xi_cutoff": self.xi_cutoff}


@dataclass(frozen=True)
class ProfileGrid:
    """Profile values ``g(s_i, x)`` of shape ``(S, n, ..., n)``."""

    disc: Discretization
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        shape = (self.disc.S,) + (self.disc.n,) * self.disc.d
        if v.shape != shape:
            raise ParameterError(f"profile shape {v.shape} differs from {shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def slice_masses(self) -> np.ndarray:
        axes = tuple(range(1, self.disc.d + 1))
        return self.disc.h**self.disc.d * np.sum(self.values**2, axis=axes)

    def normalized(self) -> "ProfileGrid":
        return ProfileGrid(self.disc, _normalize(self.values, self.disc))

    def check(self):
        dev = float(np.max(np.abs(self.slice_masses() - 1.0)))
        if dev > NORM_TOL:
            raise ParameterError(f"slice normalization violated by {dev:.3g}")


def _normalize(v: np.ndarray, disc: Discretization) -> np.ndarray:
    axes = tuple(range(1, disc.d + 1))
    m = disc.h**disc.d * np.sum(v * v, axis=axes, keepdims=True)
    if np.any(m <= 0):
        raise ParameterError("a profile slice vanishes identically")
    return v / np.sqrt(m)


def gaussian_profile(disc: Discretization, sigma: float, center=None) -> ProfileGrid:
    """Time-independent profile with ``g^2`` a Gaussian density of per-axis variance ``sigma^2``."""
    x = disc.axis()
    c = np.zeros(disc.d) if center is None else np.atleast_1d(center)
    g = np.ones((disc.n,) * disc.d)
    for j in range(disc.d):
        sh = [1] * disc.d
        sh[j] = -1
        g = g * np.exp(-((x - c[j]) ** 2) / (4.0 * sigma * sigma)).reshape(sh)
    vals = np.broadcast_to(g, (disc.S,) + g.shape).copy()
    return ProfileGrid(disc, _normalize(vals, disc))


def random_profile(disc: Discretization, seed: int, index: int = 0, width: float | None = None) -> ProfileGrid:
    """Random smooth positive profile, independent across time slices."""
    rng = derive_rng(seed, STREAM_INIT, index)
    width = width or disc.A / 4.0
    x = disc.axis()
    shape = (disc.S,) + (disc.n,) * disc.d
    log_g = np.zeros(shape)
    for j in range(disc.d):
        sh = [1] * (disc.d + 1)
        sh[j + 1] = -1
        c = rng.uniform(-disc.A / 4, disc.A / 4, size=(disc.S,) + (1,) * disc.d)
        w = width * rng.uniform(0.5, 2.0, size=(disc.S,) + (1,) * disc.d)
        log_g = log_g - (x.reshape(sh) - c) ** 2 / (4.0 * w * w)
    g = np.exp(log_g) * (1.0 + 0.2 * rng.random(shape))
    return ProfileGrid(disc, _normalize(g, disc))


class _Operator:
    """Precomputed pieces of the discrete functional for one ``(disc, t, cov)``."""

    def __init__(self, disc: Discretization, t: float, cov: PairedCovariance):
        if cov.d != disc.d:
            raise ParameterError("covariance and grid dimensions differ")
        if not t > 0:
            raise ParameterError("t must be positive")
        self.disc = disc
        d, n, h = disc.d, disc.n, disc.h
        dxi = 2.0 * math.pi / (n * h)
        m = np.fft.fftfreq(n, d=1.0 / n)
        q = np.ones((n,) * d)
        for j, a in enumerate(cov.space.alphas):
            cell = power_cell_mass((m - 0.5) * dxi, (m + 0.5) * dxi, a)
            sh = [1] * d
            sh[j] = -1
            q = q * cell.reshape(sh)
        self.q = cov.space.cq * q
        s = disc.times
        lag = np.abs(s[:, None] - s[None, :]) * t
        k = cov.time
        G = np.empty_like(lag)
        off = ~np.eye(disc.S, dtype=bool)
        G[off] = k(lag[off])
        np.fill_diagonal(G, k.smoothed(t / disc.S, 0.0) if k.singular else k(0.0))
        w = disc.time_weights
        self.w = w
        self.c = G * w[:, None] * w[None, :]
        # forward-difference Laplacian symbol, for the Sobolev preconditioner
        lam = np.zeros((n,) * d)
        for j in range(d):
            sh = [1] * d
            sh[j] = -1
            lam = lam + ((4.0 / h**2) * np.sin(math.pi * m / n) ** 2).reshape(sh)
        self.lam = lam
        self.axes = tuple(range(1, d + 1))

    def parts(self, g: np.ndarray, theta: float, need_grad: bool):
        disc = self.disc
        hd = disc.h**disc.d
        F = hd * np.fft.fftn(g * g, axes=self.axes)
        H = np.tensordot(self.c, F, axes=([1], [0]))
        inter = float(np.real(np.sum(self.q * F.conj() * H)))
        diffs = [np.roll(g, -1, axis=ax) - g for ax in self.axes]
        dir_slices = hd / disc.h**2 * sum(np.sum(dd * dd, axis=self.axes) for dd in diffs)
        dirichlet = float(np.dot(self.w, dir_slices))
        val = theta * inter - 0.5 * dirichlet
        if not need_grad:
            return val, inter, dirichlet, None
        back = np.real(np.fft.ifftn(self.q * H, axes=self.axes)) * (disc.n**disc.d)
        grad = 4.0 * theta * hd * g * back
        lap = sum(2.0 * g - np.roll(g, -1, axis=ax) - np.roll(g, 1, axis=ax) for ax in self.axes)
        wsh = self.w.reshape((-1,) + (1,) * disc.d)
        grad = grad - wsh * (hd / disc.h**2) * lap
        return val, inter, dirichlet, grad


def objective(g: ProfileGrid, t: float, theta: float, cov: PairedCovariance, check: bool = True) -> float:
    if check:
        g.check()
    return _Operator(g.disc, t, cov).parts(np.asarray(g.values), theta, False)[0]


def objective_and_gradient(g: ProfileGrid, t: float, theta: float, cov: PairedCovariance):
    """Value and gradient with respect to the raw node values ``g(s_i, x)``."""
    val, _, _, grad = _Operator(g.disc, t, cov).parts(np.asarray(g.values), theta, True)
    return val, grad


def objective_terms(g: ProfileGrid, t: float, cov: PairedCovariance) -> tuple[float, float]:
    """Interaction (per unit theta) and Dirichlet energies of a profile."""
    _, inter, dirichlet, _ = _Operator(g.disc, t, cov).parts(np.asarray(g.values), 1.0, False)
    return inter, dirichlet


@dataclass(frozen=True)
class VariationalResult:
    value: float
    profile: ProfileGrid
    gradient_norm: float
    iterations: int
    trace: tuple[float, ...]
    converged: bool
    time_drift: float
    theta: float
    t: float

    def to_dict(self):
        return {
            "E_t": self.value,
            "theta": self.theta,
            "t": self.t,
            "gradient_norm": self.gradient_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "time_drift": self.time_drift,
            "discretization": self.profile.disc.to_dict(),
        }


def _time_drift(g: np.ndarray) -> float:
    """Largest ``L^2``-relative deviation of a slice from the slice average."""
    mean = g.mean(axis=0, keepdims=True)
    axes = tuple(range(1, g.ndim))
    return float(np.max(np.sqrt(np.sum((g - mean) ** 2, axis=axes) / np.sum(mean**2))))


def maximize(
    initial: ProfileGrid,
    t: float,
    theta: float,
    cov: PairedCovariance,
    *,
    max_iter: int = 2000,
    tol: float = 1e-7,
    step: float = 1.0,
    precondition_scale: float | None = None,
) -> VariationalResult:
    """Projected ascent with an ``H^1`` preconditioner and Armijo backtracking.

    The ascent direction is the preconditioned gradient projected on each
    slice's tangent space; the retraction is slice renormalization. The
    objective trace is nondecreasing and the best iterate is returned.
    ``tol`` applies to the relative size of the projected gradient.
    """
    disc = initial.disc
    op = _Operator(disc, t, cov)
    g = _normalize(np.asarray(initial.values), disc)
    axes = op.axes
    hd = disc.h**disc.d
    scale = precondition_scale if precondition_scale is not None else (disc.A / 8.0) ** 2
    pre = 1.0 / (1.0 + scale * op.lam)

    def tangent(v, base):
        coef = np.sum(v * base, axis=axes, keepdims=True) / np.sum(base * base, axis=axes, keepdims=True)
        return v - coef * base

    val, _, _, grad = op.parts(g, theta, True)
    if not math.isfinite(val):
        raise SolverError("objective is not finite at the initial profile")
    trace = [val]
    tau = step
    gnorm = math.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gt = tangent(grad / hd, g)
        gnorm = math.sqrt(hd * float(np.sum(gt * gt)))
        if gnorm <= tol * max(1.0, abs(val)):
            converged = True
            break
        dirn = np.real(np.fft.ifftn(pre * np.fft.fftn(gt, axes=axes), axes=axes))
        dirn = tangent(dirn, g)
        slope = hd * float(np.sum(gt * dirn))
        if slope <= 0:
            dirn, slope = gt, gnorm * gnorm
        accepted = False
        for _ in range(60):
            cand = _normalize(g + tau * dirn, disc)
            cval, _, _, cgrad = op.parts(cand, theta, True)
            if not math.isfinite(cval):
                raise SolverError(f"objective diverged at iteration {it} (trace tail {trace[-5:]})")
            if cval >= val + 1e-4 * tau * slope:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            converged = abs(tau * slope) <= 1e-14 * max(1.0, abs(val))
            break
        g, val, grad = cand, cval, cgrad
        trace.append(val)
        tau *= 1.5
    return VariationalResult(
        float(val),
        ProfileGrid(disc, g),
        float(gnorm),
        it,
        tuple(trace),
        converged,
        _time_drift(g),
        theta,
        t,
    )


def prescan_width(disc: Discretization, t: float, theta: float, cov: PairedCovariance, count: int = 40) -> float:
    """Gaussian width maximizing the discrete functional over a log grid."""
    op = _Operator(disc, t, cov)
    widths = np.geomspace(1.5 * disc.h, disc.A / 3.0, count)
    vals = [op.parts(np.asarray(gaussian_profile(disc, s).values), theta, False)[0] for s in widths]
    return float(widths[int(np.argmax(vals))])


def solve(
    disc: Discretization, t: float, theta: float, cov: PairedCovariance, **kwargs
) -> VariationalResult:
    """``maximize`` from the pre-scanned time-independent Gaussian."""
    sigma = prescan_width(disc, t, theta, cov)
    kwargs.setdefault("precondition_scale", sigma * sigma)
    return maximize(gaussian_profile(disc, sigma), t, theta, cov, **kwargs)


@dataclass(frozen=True)
class ScalingCheck:
    theta_a: float
    theta_b: float
    value_a: float
    value_b: float
    ratio: float
    predicted: float

    @property
    def relative_error(self) -> float:
        return abs(self.ratio / self.predicted - 1.0)

    def to_dict(self):
        return {
            "theta_a": self.theta_a,
            "theta_b": self.theta_b,
            "E_a": self.value_a,
            "E_b": self.value_b,
            "ratio": self.ratio,
            "predicted": self.predicted,
            "relative_error": self.relative_error,
        }


def scaling_check(
    t: float, theta_pair: Sequence[float], cov: PairedCovariance, disc: Discretization, **kwargs
) -> ScalingCheck:
    """Measured ``E_t(theta_a) / E_t(theta_b)`` against ``(theta_a / theta_b)^(2 / (2 - alpha))``."""
    ta, tb = (float(v) for v in theta_pair)
    if not (ta > 0 and tb > 0):
        raise ParameterError("theta values must be positive")
    ra = solve(disc, t, ta, cov, **kwargs)
    rb = ra if tb == ta else solve(disc, t, tb, cov, **kwargs)
    if not (ra.value > 0 and rb.value > 0):
        raise SolverError("solver returned a nonpositive value; the grid does not resolve the optimum")
    alpha = cov.space.alpha_total
    return ScalingCheck(ta, tb, ra.value, rb.value, ra.value / rb.value, (ta / tb) ** (2.0 / (2.0 - alpha)))


def small_t_check(ts: Sequence[float], cov: PairedCovariance, disc: Discretization, theta: float = 1.0, **kwargs):
    """``t^((4 - alpha)/(2 - alpha)) E_t`` for each ``t``; expected to decrease as ``t`` shrinks."""
    alpha = cov.space.alpha_total
    out = []
    for t in ts:
        r = solve(disc, t, theta, cov, **kwargs)
        out.append((float(t), r.value, t ** ((4.0 - alpha) / (2.0 - alpha)) * r.value))
    return out


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 2.0:
        raise ParameterError(f"alpha must lie in (0, 2), got {alpha}")


def kappa(theta: float, t: float, alpha_total: float, d: int, E_t: float) -> float:
    """Spatial growth constant of the logarithmic maxima for bounded initial data."""
    a = float(alpha_total)
    _check_alpha(a)
    if not (E_t > 0 and t > 0 and d >= 1):
        raise ParameterError("need E_t > 0, t > 0, d >= 1")
    return (
        2.0 ** (-4.0 / (4.0 - a))
        * abs(theta) ** (4.0 / (4.0 - a))
        * t
        * E_t ** ((2.0 - a) / (4.0 - a))
        * (2.0 - a) ** (-(2.0 - a) / (4.0 - a))
        * (4.0 - a)
        * d ** (2.0 / (4.0 - a))
    )


def legendre_closed_form(theta: float, t: float, alpha_total: float, E_t: float) -> float:
    a = float(alpha_total)
    return (
        2.0 ** (-6.0 / (4.0 - a))
        * (4.0 - a)
        * (2.0 - a) ** (-(2.0 - a) / (4.0 - a))
        * abs(theta) ** (4.0 / (4.0 - a))
        * t
        * E_t ** ((2.0 - a) / (4.0 - a))
    )


@dataclass(frozen=True)
class LegendreCheck:
    numeric_sup: float
    closed_form: float
    relative_gap: float
    beta_star: float


def legendre_consistency(theta: float, t: float, alpha_total: float, E_t: float) -> LegendreCheck:
    """Golden-section sup of ``beta - c beta^(4/alpha)`` against the closed form."""
    a = float(alpha_total)
    _check_alpha(a)
    if not (theta != 0 and t > 0 and E_t > 0):
        raise ParameterError("need theta != 0, t > 0, E_t > 0")
    c = (
        (a / 2.0)
        * ((2.0 - a) / 2.0) ** ((2.0 - a) / a)
        * abs(theta) ** (-4.0 / a)
        * t ** (-(4.0 - a) / a)
        * E_t ** (-(2.0 - a) / a)
    )
    p = 4.0 / a
    beta_stat = (1.0 / (c * p)) ** (1.0 / (p - 1.0))
    beta_max = 10.0 * beta_stat
    f = lambda b: -(b - c * b**p)
    res = optimize.minimize_scalar(f, bracket=(0.0, beta_stat, beta_max), method="golden", tol=1e-12)
    if not res.success or not 0.0 < res.x < beta_max:
        raise ParameterError("golden-section search failed to stay inside the bracket")
    sup = -float(res.fun)
    closed = legendre_closed_form(theta, t, a, E_t)
    return LegendreCheck(sup, closed, abs(sup - closed) / abs(closed), float(res.x))
