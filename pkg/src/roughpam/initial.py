"""Measure-valued initial data, heat-kernel convolution and regime classification."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import ParameterError, QuadratureError

__all__ = [
    "InitialMeasure",
    "UnitConstant",
    "Atoms",
    "Density",
    "LogGrowth",
    "heat_kernel",
    "heat_convolve",
    "log_heat_convolve",
    "classify_case",
    "CaseVerdict",
    "nu_k",
    "nu",
    "measure_from_dict",
]


def heat_kernel(t: float, x) -> np.ndarray | float:
    """``p_t(x) = (2 pi t)^(-d/2) exp(-|x|^2 / 2t)``, ``x`` with trailing dim ``d``."""
    x = np.asarray(x, dtype=float)
    x = x[..., None] if x.ndim == 0 else x
    d = x.shape[-1]
    out = (2.0 * math.pi * t) ** (-d / 2.0) * np.exp(-np.sum(x * x, axis=-1) / (2.0 * t))
    return float(out) if out.ndim == 0 else out


def log_heat_kernel(t: float, x):
    x = np.asarray(x, dtype=float)
    x = x[..., None] if x.ndim == 0 else x
    d = x.shape[-1]
    return -0.5 * d * math.log(2.0 * math.pi * t) - np.sum(x * x, axis=-1) / (2.0 * t)


class InitialMeasure:
    """Nonnegative initial measure with ``0 < p_t * u0 < inf`` for all ``t, x``."""

    radial: bool = False

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class UnitConstant(InitialMeasure):
    radial = True

    def to_dict(self):
        return {"type": "unit"}


@dataclass(frozen=True)
class Atoms(InitialMeasure):
    """Finite sum of weighted Dirac masses ``sum_i w_i delta_{y_i}``."""

    points: tuple[tuple[float, ...], ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in np.atleast_1d(p)) for p in self.points)
        ws = tuple(float(w) for w in self.weights)
        if not pts or len(pts) != len(ws):
            raise ParameterError("atoms need matching nonempty points and weights")
        if len({len(p) for p in pts}) != 1:
            raise ParameterError("atom locations have mixed dimensions")
        if any(not w > 0.0 for w in ws):
            raise ParameterError("atom weights must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", ws)

    @classmethod
    def dirac(cls, d: int = 1, weight: float = 1.0) -> "Atoms":
        return cls(((0.0,) * d,), (weight,))

    @property
    def radial(self) -> bool:  # type: ignore[override]
        return len(self.points) == 1 and not any(self.points[0])

    @property
    def d(self) -> int:
        return len(self.points[0])

    @property
    def locations(self) -> np.ndarray:
        return np.array(self.points)

    @property
    def masses(self) -> np.ndarray:
        return np.array(self.weights)

    def to_dict(self):
        return {"type": "atoms", "points": [list(p) for p in self.points], "weights": list(self.weights)}


@dataclass(frozen=True)
class Density(InitialMeasure):
    """Bounded nonnegative density with a declared sup bound.

    ``func`` maps an array of points ``(..., d)`` to values ``(...)``. Radial
    densities set ``radial=True`` and may declare ``kinks`` (radii where the
    profile is not smooth) to guide quadrature.
    """

    func: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    sup_bound: float = 1.0
    d: int = 1
    radial: bool = False  # type: ignore[assignment]
    kinks: tuple[float, ...] = ()
    name: str = "density"

    def __post_init__(self):
        if not self.sup_bound > 0.0:
            raise ParameterError("density needs a positive sup bound")

    def __call__(self, y):
        return self.func(np.asarray(y, dtype=float))

    def to_dict(self):
        return {"type": "density", "name": self.name, "sup_bound": self.sup_bound, "d": self.d}


@dataclass(frozen=True)
class LogGrowth(InitialMeasure):
    """The unbounded profile ``|log(1 + |x|)|^(1/2)``; slowly growing, not bounded."""

    d: int = 1
    radial = True
    kinks = (0.0,)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        r = np.sqrt(np.sum(y * y, axis=-1))
        return np.sqrt(np.log1p(r))

    def to_dict(self):
        return {"type": "log_growth", "d": self.d}


def measure_from_dict(block: dict, d: int = 1) -> InitialMeasure:
    kind = block.get("type", "unit").lower()
    if kind == "unit":
        return UnitConstant()
    if kind in ("atoms", "dirac"):
        if kind == "dirac":
            return Atoms.dirac(int(block.get("d", d)), float(block.get("weight", 1.0)))
        return Atoms(tuple(tuple(p) for p in block["points"]), tuple(block["weights"]))
    if kind == "log_growth":
        return LogGrowth(int(block.get("d", d)))
    raise ParameterError(f"measure type {kind!r} cannot be read from a config")


# ---------------------------------------------------------------------------
# heat convolution

GH_ORDERS = (16, 32, 64, 128, 256)
QUAD_RTOL = 1e-8


def _gh_expectation(f: Callable, x: np.ndarray, t: float, order: int) -> float:
    """``E f(x + sqrt(t) Z)`` by tensor Gauss-Hermite of the given order."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    weights = weights / math.sqrt(2.0 * math.pi)
    d = x.size
    grids = np.meshgrid(*([nodes] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1) * math.sqrt(t) + x
    w = np.ones(pts.shape[0])
    wgrids = np.meshgrid(*([weights] * d), indexing="ij")
    for wg in wgrids:
        w = w * wg.ravel()
    return float(np.dot(w, f(pts)))


def _smooth_expectation(f: Callable, x: np.ndarray, t: float, kinks: Sequence[float] = ()) -> float:
    """Adaptive Gauss-Hermite; 1-D fallback to breakpoint quadrature for kinked profiles."""
    prev = None
    max_order = GH_ORDERS[-1] if x.size == 1 else (64 if x.size == 2 else 24)
    for order in GH_ORDERS:
        if order > max_order:
            break
        val = _gh_expectation(f, x, t, order)
        if prev is not None and abs(val - prev) <= QUAD_RTOL * abs(val):
            return val
        prev = val
    if x.size == 1:
        sd = math.sqrt(t)
        g = lambda y: float(f(np.array([[y]]))[0]) * math.exp(-((y - x[0]) ** 2) / (2 * t)) / math.sqrt(2 * math.pi * t)
        lo, hi = x[0] - 40 * sd, x[0] + 40 * sd
        pts = sorted({k for k in kinks if lo < k < hi} | {-k for k in kinks if lo < -k < hi} | {x[0]})
        val, err = integrate.quad(g, lo, hi, points=pts, epsabs=0.0, epsrel=QUAD_RTOL, limit=400)
        if err <= 10 * QUAD_RTOL * abs(val):
            return val
        raise QuadratureError(f"heat convolution at x={x} did not converge (err {err:.3g})")
    raise QuadratureError(
        f"Gauss-Hermite heat convolution at x={x} did not reach rtol {QUAD_RTOL} by order {max_order}"
    )


def heat_convolve(u0: InitialMeasure, t: float, x) -> float:
    """``(p_t * u0)(x)`` for a single point ``x``."""
    if not t > 0.0:
        raise ParameterError(f"t must be positive, got {t}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(u0, UnitConstant):
        return 1.0
    if isinstance(u0, Atoms):
        _check_dim(u0.d, x)
        return float(np.dot(u0.masses, heat_kernel(t, x - u0.locations)))
    if isinstance(u0, (Density, LogGrowth)):
        _check_dim(u0.d, x)
        return _smooth_expectation(u0, x, t, getattr(u0, "kinks", ()))
    raise ParameterError(f"unsupported initial measure {u0!r}")


def log_heat_convolve(u0: InitialMeasure, t: float, x) -> float:
    """``log (p_t * u0)(x)``, exact in the log domain for atoms far from ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(u0, Atoms):
        _check_dim(u0.d, x)
        logs = np.log(u0.masses) + log_heat_kernel(t, x - u0.locations)
        m = float(np.max(logs))
        return m + math.log(float(np.sum(np.exp(logs - m))))
    return math.log(heat_convolve(u0, t, x))


def _check_dim(d: int, x: np.ndarray):
    if x.size != d:
        raise ParameterError(f"point has dimension {x.size}, measure has d={d}")


# ---------------------------------------------------------------------------
# regional maxima


def _directions(d: int, count: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        ang = 2 * math.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    # fixed quasi-uniform directions: deterministic normalized Gaussian sample
    z = np.random.default_rng(0).standard_normal((count * d, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _log_profile(u0: InitialMeasure, t: float, d: int, radii: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    if u0.radial:
        dirs = np.eye(d)[:1]
    pts = radii[:, None, None] * dirs[None, :, :]
    out = np.empty(pts.shape[:2])
    for i in range(pts.shape[0]):
        for j in range(pts.shape[1]):
            out[i, j] = log_heat_convolve(u0, t, pts[i, j])
    return out


def _outer_monotone_radius(u0: InitialMeasure) -> float | None:
    """Radius beyond which ``p_t * u0`` decreases along every ray, if known."""
    if isinstance(u0, Atoms):
        return float(np.max(np.linalg.norm(u0.locations, axis=1)))
    return None


def region_log_max(
    u0: InitialMeasure,
    t: float,
    d: int,
    r_lo: float,
    r_hi: float | None,
    radial_nodes: int = 64,
    angular_nodes: int = 32,
) -> tuple[float, float]:
    """Max and min of ``log p_t*u0`` over ``r_lo <= |x| <= r_hi`` (``None``: unbounded).

    Unbounded regions need a monotone-tail argument: for atoms beyond the
    outermost atom the maximum sits on the inner sphere; for increasing radial
    profiles the region is truncated at ``10 r_lo`` and the truncation noted.
    """
    if r_hi is None:
        rad = _outer_monotone_radius(u0)
        if rad is not None:
            r_hi = max(r_lo, rad)
        elif u0.radial or isinstance(u0, UnitConstant):
            r_hi = max(10.0 * r_lo, r_lo + 10.0 * math.sqrt(t))
        else:
            raise ParameterError("unbounded region needs a radial measure or an outer truncation")
    if r_hi < r_lo:
        raise ParameterError("empty region")
    if isinstance(u0, UnitConstant):
        return 0.0, 0.0
    if r_hi == r_lo:
        radii = np.array([r_lo])
    elif r_lo > 0 and r_hi / r_lo > 20:
        radii = np.concatenate([[r_lo], np.geomspace(max(r_lo, 1e-12), r_hi, radial_nodes)])
    else:
        radii = np.linspace(r_lo, r_hi, radial_nodes)
    if isinstance(u0, Atoms):
        # add the radii of atoms inside the region so peaks are not missed
        extra = np.linalg.norm(u0.locations, axis=1)
        radii = np.unique(np.concatenate([radii, extra[(extra >= r_lo) & (extra <= r_hi)]]))
    vals = _log_profile(u0, t, d, radii, _directions(d, angular_nodes))
    if isinstance(u0, Atoms) and not u0.radial:
        # exact values at atom locations inside the region
        for p in u0.locations:
            if r_lo <= np.linalg.norm(p) <= r_hi:
                v = log_heat_convolve(u0, t, p)
                vals = np.append(vals, v)
    return float(np.max(vals)), float(np.min(vals))


def nu_k(u0: InitialMeasure, t: float, R: float, k: float, d: int | None = None) -> float:
    """``0 v -log max_{R <= |x| <= kR} p_t * u0(x)``."""
    if not R > 0.0:
        raise ParameterError("R must be positive")
    if k < 1.0:
        raise ParameterError("k must be >= 1")
    d = d or _dim(u0)
    hi, _ = region_log_max(u0, t, d, R, k * R)
    return max(0.0, -hi)


def nu(u0: InitialMeasure, t: float, R: float, d: int | None = None) -> float:
    """``0 v -log max_{|x| >= R} p_t * u0(x)``."""
    if not R > 0.0:
        raise ParameterError("R must be positive")
    d = d or _dim(u0)
    if isinstance(u0, Density) and not u0.radial:
        raise ParameterError("non-radial density needs an explicit outer truncation; use nu_k")
    hi, _ = region_log_max(u0, t, d, R, None)
    return max(0.0, -hi)


def _dim(u0: InitialMeasure) -> int:
    return getattr(u0, "d", 1) if not isinstance(u0, UnitConstant) else 1


@dataclass
class CaseVerdict:
    verdict: str
    radii: list[float]
    ratio_in: list[float]
    ratio_out: list[float]
    tags: list[str]
    thresholds: dict

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "radii": self.radii,
            "ratio_in": self.ratio_in,
            "ratio_out": self.ratio_out,
            "tags": self.tags,
            "thresholds": self.thresholds,
        }


CASE_I_THRESHOLD = 0.05
CASE_II_THRESHOLD = -10.0


def _nonincreasing_tail(radii: np.ndarray, vals: np.ndarray) -> bool:
    last = radii >= radii[-1] / 10.0
    idx = np.flatnonzero(last)
    start = max(0, idx[0] - 1)
    tail = vals[start:]
    return bool(tail.size >= 2 and np.all(np.diff(tail) <= 1e-12 * np.maximum(1.0, np.abs(tail[:-1]))))


def classify_case(
    u0: InitialMeasure,
    t: float,
    alpha_total: float,
    radii: Sequence[float],
    d: int | None = None,
    case_i_threshold: float = CASE_I_THRESHOLD,
    case_ii_threshold: float = CASE_II_THRESHOLD,
) -> CaseVerdict:
    """Finite-R heuristic verdict between the growth regime, the decay regime or neither.

    ``ratio_in(R) = max_{|x|<=R} |log p_t*u0| / (log R)^(2/(4-alpha))`` tending
    to 0 suggests the growth regime; ``ratio_out(R)`` with the outer maximum
    of ``log p_t*u0`` diverging to ``-inf`` suggests the decay regime.
    """
    radii = np.asarray(sorted(radii), dtype=float)
    if radii.size < 3 or radii[-1] / radii[0] < 1e3 or radii[0] <= 1.0:
        raise ParameterError("radii must exceed 1 and span at least three decades")
    if not 0.0 < alpha_total < 2.0:
        raise ParameterError("alpha_total must lie in (0, 2)")
    d = d or _dim(u0)
    power = 2.0 / (4.0 - alpha_total)
    r_in, r_out = [], []
    for R in radii:
        scale = math.log(R) ** power
        hi, lo = region_log_max(u0, t, d, 0.0, R)
        r_in.append(max(abs(hi), abs(lo)) / scale)
        out_hi, _ = region_log_max(u0, t, d, R, None)
        r_out.append(out_hi / scale)
    r_in = np.array(r_in)
    r_out = np.array(r_out)
    tags = []
    if r_in[-1] < case_i_threshold and _nonincreasing_tail(radii, r_in):
        verdict = "CaseI"
    elif r_out[-1] < case_ii_threshold and _nonincreasing_tail(radii, r_out):
        verdict = "CaseII"
    else:
        verdict = "Undetermined"
        if r_in[-1] > 0 and np.all(np.diff(r_in[-3:]) > 0):
            tags.append("possible-case-A")
        elif r_in[-1] >= case_i_threshold:
            tags.append("possible-case-B")
    return CaseVerdict(
        verdict,
        radii.tolist(),
        r_in.tolist(),
        r_out.tolist(),
        tags,
        {"case_i": case_i_threshold, "case_ii": case_ii_threshold, "power": power},
    )
