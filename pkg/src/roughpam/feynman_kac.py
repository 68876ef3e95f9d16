"""Feynman-Kac estimators: pathwise under one noise realization, and moments
through the conditional Gaussian reduction (no field sampling).

Given the bridges, the exponent ``theta * int_0^t W(t - s, path(s)) ds`` is a
centered Gaussian whose variance is the double time integral of
``gamma_0(s - r) gamma(path(s) - path(r))``. Moments therefore reduce to path
averages of ``exp{(theta^2 / 2) sum_{j,k} I_jk}`` with pair interactions
``I_jk``, evaluated here by the trapezoid rule with ``gamma`` replaced by
``gamma_eps``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, special, stats

from .errors import BoxOverflowError, GridMismatchError, GuardError, ParameterError
from .initial import Atoms, Density, InitialMeasure, LogGrowth, UnitConstant, heat_convolve, log_heat_kernel
from .kernels import PairedCovariance, RegularizedSpaceKernel, SpaceSpectralDensity, TimeKernel
from .noise import NoiseRealization, evaluate_noise
from .parallel import map_blocks
from .paths import BrownianPath, PathGrid, pin_bridges, sample_bm_batch, trapezoid_weights
from .rng import STREAM_ENDPOINTS, derive_rng

__all__ = [
    "AffineShift",
    "FkPointEstimate",
    "MomentEstimate",
    "GirsanovCheck",
    "ProfilePoint",
    "SlopeFit",
    "time_weight_matrix",
    "pair_interaction",
    "moment_mc",
    "moment_curve",
    "mean_pair_interaction",
    "jensen_lower_bound",
    "pointwise_fk",
    "pointwise_log_values",
    "girsanov_bridge_check",
    "spatial_max_profile",
    "slope_fit",
    "log_mean_exp",
]

MAX_ORDER = 8
MAX_ATOMS = 4
EXIT_LIMIT = 0.05
_CHUNK_POINTS = 2_000_000


# ---------------------------------------------------------------------------
# log-domain helpers


def log_mean_exp(x: np.ndarray) -> tuple[float, float]:
    """``log mean exp(x)`` and ``log`` of the standard error of that mean."""
    x = np.asarray(x, dtype=float)
    n = x.size
    m = float(np.max(x))
    e = np.exp(x - m)
    log_mean = m + math.log(float(np.mean(e)))
    sd = float(np.std(e, ddof=1)) if n > 1 else 0.0
    log_se = m + math.log(sd / math.sqrt(n)) if sd > 0 else -math.inf
    return log_mean, log_se


def _safe_exp(v: float) -> float:
    return math.exp(v) if v < 709.0 else math.inf


# ---------------------------------------------------------------------------
# pair interaction


@dataclass(frozen=True)
class AffineShift:
    """``shift(s, r) = s * a + r * b + c`` with vectors ``a, b, c`` in ``R^d``.

    The moment shift ``(s/t) y_j - (r/t) y_k - ((s - r)/t) x`` is
    ``AffineShift.for_pair(t, x, y_j, y_k)``.
    """

    a: tuple[float, ...]
    b: tuple[float, ...]
    c: tuple[float, ...]

    def __post_init__(self):
        for name in ("a", "b", "c"):
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(getattr(self, name))))
        if not (len(self.a) == len(self.b) == len(self.c)):
            raise ParameterError("shift components differ in dimension")

    @classmethod
    def zero(cls, d: int) -> "AffineShift":
        return cls((0.0,) * d, (0.0,) * d, (0.0,) * d)

    @classmethod
    def for_pair(cls, t: float, x, y_j, y_k) -> "AffineShift":
        x, y_j, y_k = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, y_j, y_k))
        return cls((y_j - x) / t, -(y_k - x) / t, np.zeros_like(x))

    def swapped(self) -> "AffineShift":
        """Shift for the pair taken in the opposite order: ``-shift(r, s)``."""
        neg = lambda v: tuple(-u for u in v)
        return AffineShift(neg(self.b), neg(self.a), neg(self.c))

    @property
    def d(self) -> int:
        return len(self.a)


def time_weight_matrix(k: TimeKernel, grid: PathGrid) -> np.ndarray:
    """Trapezoid weights times ``gamma_0(s - r)`` on the grid.

    A singular kernel is replaced on the diagonal by its smoothing at the grid
    scale ``delta = t / L``.
    """
    s = grid.times
    lag = np.abs(s[:, None] - s[None, :])
    mat = np.empty_like(lag)
    off = ~np.eye(s.size, dtype=bool)
    mat[off] = k(lag[off])
    diag = k.smoothed(grid.dt, 0.0) if k.singular else k(0.0)
    np.fill_diagonal(mat, diag)
    w = trapezoid_weights(grid)
    return mat * w[:, None] * w[None, :]


def _pair_batch(cj: np.ndarray, ck: np.ndarray, tmat: np.ndarray, reg: RegularizedSpaceKernel) -> np.ndarray:
    """Double trapezoid sums for a batch: ``cj, ck`` of shape ``(n, L + 1, d)``."""
    n, m, _ = cj.shape
    per = max(1, _CHUNK_POINTS // (m * m))
    out = np.empty(n)
    for lo in range(0, n, per):
        hi = min(n, lo + per)
        diff = cj[lo:hi, :, None, :] - ck[lo:hi, None, :, :]
        out[lo:hi] = np.einsum("nsr,sr->n", reg(diff), tmat)
    return out


def pair_interaction(
    path_j: BrownianPath,
    path_k: BrownianPath,
    shift: AffineShift,
    time_kernel: TimeKernel,
    reg_kernel: RegularizedSpaceKernel,
) -> float:
    """Trapezoid value of ``int int gamma_0(s-r) gamma_eps(p_j(s) - p_k(r) + shift(s, r)) ds dr``."""
    if path_j.grid != path_k.grid:
        raise GridMismatchError("paths live on different time grids")
    if path_j.d != path_k.d or shift.d != path_j.d or reg_kernel.d != path_j.d:
        raise ParameterError("paths, shift and kernel differ in dimension")
    s = path_j.grid.times[:, None]
    # the affine shift splits into an s-part carried by path j and an r-part by path k
    cj = path_j.positions + s * np.asarray(shift.a) + np.asarray(shift.c)
    ck = path_k.positions - s * np.asarray(shift.b)
    tmat = time_weight_matrix(time_kernel, path_j.grid)
    return float(_pair_batch(cj[None], ck[None], tmat, reg_kernel)[0])


def mean_pair_interaction(t: float, cov: PairedCovariance, epsilon: float, bridge: bool = True) -> float:
    """``E int int gamma_0(s-r) gamma_eps(B(s) - B(r)) ds dr`` by 1-D quadrature.

    Uses ``E gamma_eps(Z) = C_q prod Gamma(a_j/2) (eps + v/2)^(-a_j/2)`` for a
    centered Gaussian ``Z`` with per-coordinate variance ``v``; ``v(u) = u`` for
    free motion and ``u - u^2/t`` for the bridge.
    """
    q = cov.space
    pref = q.cq * math.prod(special.gamma(a / 2.0) for a in q.alphas)
    at = q.alpha_total

    def f(u):
        v = u - u * u / t if bridge else u
        return (t - u) * float(cov.time(u)) * (epsilon + 0.5 * v) ** (-at / 2.0)

    pts = [t / 2.0] if bridge else None
    if cov.time.singular:
        val = integrate.quad(f, 0.0, t, points=pts, limit=400, epsabs=0.0, epsrel=1e-11)[0]
    else:
        val = integrate.quad(f, 0.0, t, points=pts, limit=400, epsabs=0.0, epsrel=1e-11)[0]
    return 2.0 * pref * val


def jensen_lower_bound(t: float, theta: float, cov: PairedCovariance, epsilon: float) -> float:
    """``exp{(theta^2/2) E I}``, a lower bound for the first moment with ``u0 = 1``."""
    return math.exp(0.5 * theta * theta * mean_pair_interaction(t, cov, epsilon, bridge=True))


# ---------------------------------------------------------------------------
# moments


@dataclass(frozen=True)
class MomentEstimate:
    order: int
    value: float
    log_value: float
    standard_error: float
    log_standard_error: float
    n_samples: int
    epsilon: float
    steps: int
    extrapolation: dict | None = None

    def to_dict(self):
        return {
            "order": self.order,
            "value": self.value,
            "log_value": self.log_value,
            "standard_error": self.standard_error,
            "n": self.n_samples,
            "epsilon": self.epsilon,
            "steps": self.steps,
            "extrapolation": self.extrapolation,
        }


def _atom_list(u0: InitialMeasure, x: np.ndarray, t: float):
    """Endpoint displacements ``y - x`` and log weights ``log(w p_t(y - x))``."""
    if isinstance(u0, UnitConstant):
        return np.zeros((1, x.size)), np.zeros(1)
    if isinstance(u0, Atoms):
        if len(u0.masses) > MAX_ATOMS:
            raise GuardError(f"at most {MAX_ATOMS} atoms are supported, got {len(u0.masses)}")
        disp = u0.locations - x
        logw = np.log(u0.masses) + log_heat_kernel(t, disp)
        return disp, logw
    raise ParameterError("moments need UnitConstant or Atoms initial data")


def _moment_block(args):
    """Per-sample log contributions ``log sum_tau W_tau exp{X_i(tau)}`` for a block of samples.

    Returns an array ``(n_block, n_orders, n_eps)``.
    """
    seed, lo, hi, n_max, orders, t, steps, d, disp, logw, theta, time_kernel, space, eps_list = args
    grid = PathGrid(t, steps)
    tmat = time_weight_matrix(time_kernel, grid)
    idx = np.arange(lo * n_max, hi * n_max)
    bridges = pin_bridges(sample_bm_batch(seed, grid, d, idx), grid).reshape(hi - lo, n_max, steps + 1, d)
    frac = (grid.times / t)[:, None]
    m = disp.shape[0]
    shifted = bridges[:, :, None, :, :] + frac[None, None, None] * disp[None, None, :, None, :]
    out = np.empty((hi - lo, len(orders), len(eps_list)))
    half = 0.5 * theta * theta
    for e_i, eps in enumerate(eps_list):
        reg = RegularizedSpaceKernel(space, eps)
        # pair[j, k, a, b] over samples, only j <= k
        pair = np.zeros((hi - lo, n_max, n_max, m, m))
        for j in range(n_max):
            for k in range(j, n_max):
                for a in range(m):
                    for b in range(m):
                        if j == k and b < a:
                            pair[:, j, j, a, b] = pair[:, j, j, b, a]
                            continue
                        pair[:, j, k, a, b] = _pair_batch(shifted[:, j, a], shifted[:, k, b], tmat, reg)
        for o_i, n in enumerate(orders):
            terms = []
            for tau in itertools.product(range(m), repeat=n):
                x = np.zeros(hi - lo)
                for j in range(n):
                    x += pair[:, j, j, tau[j], tau[j]]
                    for k in range(j + 1, n):
                        x += 2.0 * pair[:, j, k, tau[j], tau[k]]
                terms.append(half * x + float(np.sum(logw[list(tau)])))
            out[:, o_i, e_i] = special.logsumexp(np.stack(terms, axis=1), axis=1)
    return out


def _aitken(v1: float, v2: float, v3: float) -> float:
    den = (v3 - v2) - (v2 - v1)
    if den == 0.0 or not math.isfinite(den):
        return v3
    return v3 - (v3 - v2) ** 2 / den


def moment_curve(
    orders: Sequence[int],
    t: float,
    x,
    u0: InitialMeasure,
    theta: float,
    epsilon: float,
    n_samples: int,
    seed: int,
    *,
    cov: PairedCovariance,
    steps: int = 32,
    richardson: bool = False,
    workers: int = 1,
    block: int = 250,
) -> list[MomentEstimate]:
    """Moments of several orders from one shared family of bridges.

    Sample ``i`` uses the bridges with substream indices ``i * N_max + j``, so
    the order-``N`` estimate reuses the first ``N`` bridges of each tuple.
    """
    orders = [int(n) for n in orders]
    if not orders or min(orders) < 1:
        raise ParameterError("orders must be positive integers")
    if max(orders) > MAX_ORDER:
        raise GuardError(f"moment order above {MAX_ORDER} is refused")
    if n_samples < 2:
        raise ParameterError("need at least two samples")
    if not (t > 0 and epsilon > 0):
        raise ParameterError("t and epsilon must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = cov.d
    if x.size != d:
        raise ParameterError("x has the wrong dimension")
    disp, logw = _atom_list(u0, x, t)
    if disp.shape[1] != d:
        raise ParameterError("initial measure dimension differs from the covariance")
    if theta == 0.0:
        log_z = math.log(heat_convolve(u0, t, x))
        return [
            MomentEstimate(n, _safe_exp(n * log_z), n * log_z, 0.0, -math.inf, n_samples, epsilon, steps)
            for n in orders
        ]
    eps_list = [epsilon, epsilon / 2.0, epsilon / 4.0] if richardson else [epsilon]
    n_max = max(orders)
    tasks = []
    for lo in range(0, n_samples, block):
        hi = min(n_samples, lo + block)
        tasks.append((seed, lo, hi, n_max, orders, t, steps, d, disp, logw, theta, cov.time, cov.space, eps_list))
    logs = np.concatenate(map_blocks(_moment_block, tasks, workers), axis=0)
    out = []
    for o_i, n in enumerate(orders):
        lv, lse = log_mean_exp(logs[:, o_i, 0])
        extra = None
        if richardson:
            vals = [log_mean_exp(logs[:, o_i, e])[0] for e in range(3)]
            extra = {
                "epsilons": eps_list,
                "log_values": vals,
                "log_value_extrapolated": _aitken(*vals),
            }
        out.append(MomentEstimate(n, _safe_exp(lv), lv, _safe_exp(lse), lse, n_samples, epsilon, steps, extra))
    return out


def moment_mc(
    N: int,
    t: float,
    x,
    u0: InitialMeasure,
    theta: float,
    epsilon: float,
    n_samples: int,
    seed: int,
    *,
    cov: PairedCovariance,
    steps: int = 32,
    richardson: bool = False,
    workers: int = 1,
) -> MomentEstimate:
    """Monte Carlo value of ``E u_theta(t, x)^N`` by the conditional Gaussian reduction."""
    return moment_curve(
        [N], t, x, u0, theta, epsilon, n_samples, seed,
        cov=cov, steps=steps, richardson=richardson, workers=workers,
    )[0]


# ---------------------------------------------------------------------------
# bridge versus free motion


@dataclass(frozen=True)
class GirsanovCheck:
    """Bridge and free-motion values of ``E exp{Q_n}`` plus a rigorous upper bound.

    ``chain_bound`` is ``2^(d/2) E exp{4 Q_n^{[0, t/2]}}`` along free motion:
    splitting ``[0, t]`` in halves (Cauchy-Schwarz inside the spectral square),
    Hoelder, time reversal of the bridge and the Girsanov density bound
    ``(t / (t - t/2))^(d/2)`` on ``[0, t/2]`` give
    ``E exp{Q_n(bridge)} <= chain_bound``.
    """

    n: int
    bridge_value: float
    bm_value: float
    bridge_se: float
    bm_se: float
    difference_se: float
    chain_bound: float
    chain_bound_se: float

    @property
    def combined_se(self) -> float:
        return math.hypot(self.bridge_se, self.bm_se)

    def to_dict(self):
        return {
            "n": self.n,
            "bridge_value": self.bridge_value,
            "bm_value": self.bm_value,
            "bridge_se": self.bridge_se,
            "bm_se": self.bm_se,
            "difference_se": self.difference_se,
            "chain_bound": self.chain_bound,
            "chain_bound_se": self.chain_bound_se,
        }


def _q_exponent(paths: np.ndarray, tmat: np.ndarray, reg: RegularizedSpaceKernel) -> np.ndarray:
    """``sum_{j,k} I_jk`` for paths of shape ``(n_samples, n, L + 1, d)``."""
    n = paths.shape[1]
    out = np.zeros(paths.shape[0])
    for j in range(n):
        for k in range(j, n):
            out += (1.0 if j == k else 2.0) * _pair_batch(paths[:, j], paths[:, k], tmat, reg)
    return out


def _girsanov_block(args):
    seed, lo, hi, n, t, steps, d, theta, time_kernel, space, epsilon = args
    grid = PathGrid(t, steps)
    half = PathGrid(t / 2.0, steps // 2)
    tmat = time_weight_matrix(time_kernel, grid)
    tmat_half = time_weight_matrix(time_kernel, half)
    reg = RegularizedSpaceKernel(space, epsilon)
    bm = sample_bm_batch(seed, grid, d, np.arange(lo * n, hi * n)).reshape(hi - lo, n, steps + 1, d)
    br = pin_bridges(bm, grid)
    c = 0.5 * theta * theta
    res = np.empty((hi - lo, 3))
    res[:, 0] = c * _q_exponent(br, tmat, reg)
    res[:, 1] = c * _q_exponent(bm, tmat, reg)
    res[:, 2] = 4.0 * c * _q_exponent(bm[:, :, : steps // 2 + 1], tmat_half, reg)
    return res


def girsanov_bridge_check(
    n: int,
    t: float,
    time_kernel: TimeKernel,
    space_density: SpaceSpectralDensity,
    epsilon: float,
    n_samples: int,
    seed: int,
    *,
    theta: float = 1.0,
    steps: int = 32,
    workers: int = 1,
) -> GirsanovCheck:
    """``E exp{Q_n}`` along pinned bridges and along free motions on ``[0, t]``.

    Each bridge is the pinning transform of the free path it is paired with,
    so the two estimates share randomness; the standard error of their
    difference is reported separately. Over the same interval the bridge
    value is typically the larger one (bridge increments have smaller
    variance), so the comparison that holds in general is against
    ``chain_bound``.
    """
    if n < 1 or n > 4:
        raise GuardError("n must lie in 1..4")
    if steps % 2:
        raise ParameterError("steps must be even to split the interval in halves")
    tasks = [
        (seed, lo, min(n_samples, lo + 250), n, t, steps, space_density.d, theta, time_kernel, space_density, epsilon)
        for lo in range(0, n_samples, 250)
    ]
    ex = np.concatenate(map_blocks(_girsanov_block, tasks, workers), axis=0)
    vb, vm, vh = np.exp(ex[:, 0]), np.exp(ex[:, 1]), np.exp(ex[:, 2])
    sq = math.sqrt(ex.shape[0])
    dens = 2.0 ** (space_density.d / 2.0)
    return GirsanovCheck(
        n,
        float(vb.mean()),
        float(vm.mean()),
        float(vb.std(ddof=1) / sq),
        float(vm.std(ddof=1) / sq),
        float((vm - vb).std(ddof=1) / sq),
        float(dens * vh.mean()),
        float(dens * vh.std(ddof=1) / sq),
    )


# ---------------------------------------------------------------------------
# pathwise estimates under one realization


@dataclass(frozen=True)
class FkPointEstimate:
    value: float
    log_value: float
    standard_error: float
    n_paths: int
    t: float
    x: tuple[float, ...]
    theta: float
    noise_seed: int
    exit_fraction: float = 0.0

    def to_dict(self):
        return {
            "value": self.value,
            "log_value": self.log_value,
            "standard_error": self.standard_error,
            "n": self.n_paths,
            "t": self.t,
            "x": list(self.x),
            "theta": self.theta,
            "noise_seed": self.noise_seed,
            "exit_fraction": self.exit_fraction,
        }


def _default_steps(noise: NoiseRealization) -> int:
    return max(16, noise.grid.time_nodes - 1)


def _is_zero(noise: NoiseRealization) -> bool:
    return not np.any(noise.values)


def _endpoint_draws(seed: int, n: int, d: int):
    rng = derive_rng(seed, STREAM_ENDPOINTS)
    return rng.standard_normal((n, d)), rng.random(n)


def pointwise_log_values(
    noise: NoiseRealization,
    t: float,
    xs: np.ndarray,
    u0: InitialMeasure,
    theta: float,
    n_paths: int,
    seed: int,
    steps: int | None = None,
):
    """Log FK estimates at each row of ``xs`` with common random numbers.

    Every lattice point reuses the same origin bridges and endpoint draws:
    Gaussian endpoints ``y = x + sqrt(t) Z`` share ``Z``, atom choices share
    the uniform used for inverse-CDF selection. Returns ``(log_values,
    log_standard_errors, exit_fractions)``.
    """
    g = noise.grid
    if not math.isclose(g.t, t, rel_tol=1e-12):
        raise GridMismatchError(f"noise horizon {g.t} differs from t = {t}")
    xs = np.asarray(xs, dtype=float).reshape(-1, g.d)
    steps = steps or _default_steps(noise)
    grid = PathGrid(t, steps)
    s = grid.times
    w = trapezoid_weights(grid)
    base = pin_bridges(sample_bm_batch(seed, grid, g.d, np.arange(n_paths)), grid)
    z, u = _endpoint_draws(seed, n_paths, g.d)
    lo, hi = np.asarray(g.lo), np.asarray(g.hi)
    frac = (s / t)[None, :, None]
    logs = np.empty(len(xs))
    lses = np.empty(len(xs))
    exits = np.empty(len(xs))
    for i, x in enumerate(xs):
        if isinstance(u0, Atoms):
            logp = np.log(u0.masses) + log_heat_kernel(t, u0.locations - x)
            log_z = float(special.logsumexp(logp))
            cdf = np.cumsum(np.exp(logp - log_z))
            pick = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), cdf.size - 1)
            disp = u0.locations[pick] - x
            log_f = np.full(n_paths, log_z)
        elif isinstance(u0, UnitConstant):
            disp = math.sqrt(t) * z
            log_f = np.zeros(n_paths)
        elif isinstance(u0, (Density, LogGrowth)):
            disp = math.sqrt(t) * z
            fy = np.asarray(u0(x + disp), dtype=float)
            with np.errstate(divide="ignore"):
                log_f = np.log(fy)
        else:
            raise ParameterError(f"unsupported initial measure {type(u0).__name__}")
        paths = x + base + frac * disp[:, None, :]
        out = np.any((paths < lo) | (paths > hi), axis=(1, 2))
        exits[i] = float(np.mean(out))
        if exits[i] > EXIT_LIMIT:
            raise BoxOverflowError(
                f"{100 * exits[i]:.1f}% of paths from x={x.tolist()} leave the noise box; enlarge it"
            )
        if exits[i] > 0:
            paths = np.clip(paths, lo, hi)
        vals = evaluate_noise(noise, np.broadcast_to(t - s, paths.shape[:2]), paths)
        expo = theta * (vals @ w) + log_f
        logs[i], lses[i] = log_mean_exp(expo)
    return logs, lses, exits


def pointwise_fk(
    noise: NoiseRealization,
    t: float,
    x,
    u0: InitialMeasure,
    theta: float,
    n_paths: int,
    seed: int,
    steps: int | None = None,
) -> FkPointEstimate:
    """Importance-sampled ``u_theta(t, x)`` under the time-reversed realization."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not math.isclose(noise.grid.t, t, rel_tol=1e-12):
        raise GridMismatchError(f"noise horizon {noise.grid.t} differs from t = {t}")
    if theta == 0.0 or _is_zero(noise):
        z = heat_convolve(u0, t, x)
        return FkPointEstimate(z, math.log(z), 0.0, n_paths, t, tuple(x), theta, noise.seed)
    lv, lse, ex = pointwise_log_values(noise, t, x[None], u0, theta, n_paths, seed, steps)
    return FkPointEstimate(
        _safe_exp(lv[0]), float(lv[0]), _safe_exp(lse[0]), n_paths, t, tuple(x), theta, noise.seed, float(ex[0])
    )


# ---------------------------------------------------------------------------
# spatial profiles and fits


@dataclass(frozen=True)
class ProfilePoint:
    R: float
    log_max: float
    argmax: tuple[float, ...]
    count: int

    @property
    def value(self) -> float:
        return _safe_exp(self.log_max)


def lattice_points(d: int, radius: float, density: float) -> np.ndarray:
    """Cubic lattice of spacing ``1 / density`` restricted to the closed ball."""
    h = 1.0 / density
    m = int(math.floor(radius / h + 1e-9))
    ax = np.arange(-m, m + 1) * h
    pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return pts[np.linalg.norm(pts, axis=1) <= radius * (1 + 1e-12)]


def spatial_max_profile(
    noise: NoiseRealization,
    t: float,
    theta: float,
    u0: InitialMeasure,
    radii: Sequence[float],
    grid_density: float,
    n_paths: int,
    seed: int,
    *,
    region: str = "ball",
    k: float = 0.5,
    outer_radius: float | None = None,
    steps: int | None = None,
    workers: int = 1,
) -> list[ProfilePoint]:
    """Maxima of the log FK estimate over nested regions, one shared realization.

    ``region`` is ``"ball"`` (``|x| <= R``), ``"annulus"`` (``kR <= |x| <= R``)
    or ``"outer"`` (``R <= |x| <= outer_radius``). The lattice is evaluated
    once, with the same bridge family at every point.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0 or np.any(np.diff(radii) <= 0) or radii[0] < 0:
        raise ParameterError("radii must be nonnegative and strictly increasing")
    if region not in ("ball", "annulus", "outer"):
        raise ParameterError(f"unknown region {region!r}")
    if region == "annulus" and not 0.0 <= k < 1.0:
        raise ParameterError("annulus ratio k must lie in [0, 1)")
    r_top = float(radii[-1]) if region != "outer" else float(outer_radius or radii[-1])
    if region == "outer" and r_top < radii[-1]:
        raise ParameterError("outer_radius must not be below the largest radius")
    pts = lattice_points(noise.grid.d, r_top, grid_density)
    g = noise.grid
    if np.any(pts < np.asarray(g.lo)) or np.any(pts > np.asarray(g.hi)):
        raise BoxOverflowError("lattice leaves the noise box")
    if theta == 0.0 or _is_zero(noise):
        logs = np.array([math.log(heat_convolve(u0, t, p)) for p in pts])
    else:
        chunks = np.array_split(np.arange(len(pts)), max(1, min(len(pts), 8 * max(1, workers))))
        tasks = [(noise, t, pts[c], u0, theta, n_paths, seed, steps) for c in chunks if c.size]
        logs = np.concatenate([r[0] for r in map_blocks(_profile_block, tasks, workers)])
    norms = np.linalg.norm(pts, axis=1)
    out = []
    for R in radii:
        if region == "ball":
            mask = norms <= R * (1 + 1e-12)
        elif region == "annulus":
            mask = (norms >= k * R * (1 - 1e-12)) & (norms <= R * (1 + 1e-12))
        else:
            mask = (norms >= R * (1 - 1e-12)) & (norms <= r_top * (1 + 1e-12))
        if not np.any(mask):
            raise ParameterError(f"no lattice points in the region for R = {R}")
        idx = np.flatnonzero(mask)
        best = idx[np.argmax(logs[idx])]
        out.append(ProfilePoint(float(R), float(logs[best]), tuple(pts[best].tolist()), int(idx.size)))
    return out


def _profile_block(args):
    noise, t, pts, u0, theta, n_paths, seed, steps = args
    return pointwise_log_values(noise, t, pts, u0, theta, n_paths, seed, steps)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float
    intercept_stderr: float
    n: int

    def to_dict(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "slope_stderr": self.slope_stderr,
            "intercept_stderr": self.intercept_stderr,
            "n": self.n,
        }


def slope_fit(xs, ys) -> SlopeFit:
    """Ordinary least squares of ``ys`` on ``xs``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ParameterError("xs and ys must be 1-D of equal length")
    if xs.size < 3:
        raise ParameterError("need at least three points")
    if not np.all(np.isfinite(xs)) or not np.all(np.isfinite(ys)):
        raise ParameterError("fit data must be finite")
    if np.ptp(xs) == 0.0:
        raise ParameterError("abscissae have zero variance")
    res = stats.linregress(xs, ys)
    resid = ys - (res.intercept + res.slope * xs)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0.0 or ss_res <= 1e-30 * max(ss_tot, 1.0) else max(0.0, 1.0 - ss_res / ss_tot)
    return SlopeFit(
        float(res.slope), float(res.intercept), min(1.0, r2),
        float(res.stderr), float(res.intercept_stderr), int(xs.size),
    )
