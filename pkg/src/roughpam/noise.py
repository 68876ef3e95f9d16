"""Random-phase spectral synthesis of the mollified noise on a space-time grid.

A realization is

    W(s, x) = Re sum_k sqrt(2 w_k) Z_k exp(i (eta_k s + xi_k . x))

with independent complex standard Gaussians ``Z_k`` (``E|Z_k|^2 = 1``) and
cell weights ``w_k`` equal to the temporal spectral mass times the sinc^2
attenuation of the box mollifier, times the exact Gaussian-damped spatial
spectral mass of the cell. The covariance is ``sum_k w_k cos(...)``, the
truncated and discretized version of ``gamma_{0,delta}(tau) gamma_eps(h)``.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate

from .errors import BoxOverflowError, GridMismatchError, ParameterError
from .kernels import PairedCovariance, gaussian_power_cell_mass
from .rng import STREAM_NOISE, derive_rng

__all__ = [
    "FrequencyGrid",
    "SpaceTimeGrid",
    "NoiseRealization",
    "SpectralWeights",
    "spectral_weights",
    "synthesize_noise",
    "evaluate_noise",
    "empirical_covariance",
    "truncated_covariance_oracle",
    "write_binary",
    "read_binary",
    "zero_noise",
]


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform cells on ``[-cutoff, cutoff]`` per axis, nodes at cell midpoints."""

    eta_cutoff: float
    eta_count: int
    xi_cutoff: tuple[float, ...]
    xi_count: tuple[int, ...]

    def __post_init__(self):
        xc = tuple(float(v) for v in np.atleast_1d(self.xi_cutoff))
        xn = tuple(int(v) for v in np.atleast_1d(self.xi_count))
        object.__setattr__(self, "xi_cutoff", xc)
        object.__setattr__(self, "xi_count", xn)
        if len(xc) != len(xn):
            raise ParameterError("xi cutoffs and counts differ in length")
        if self.eta_count < 2 or any(n < 2 for n in xn):
            raise ParameterError("frequency counts must be >= 2")
        if not self.eta_cutoff > 0 or any(not c > 0 for c in xc):
            raise ParameterError("frequency cutoffs must be positive")

    @staticmethod
    def _edges(cutoff: float, count: int) -> np.ndarray:
        return np.linspace(-cutoff, cutoff, count + 1)

    def eta_edges(self) -> np.ndarray:
        return self._edges(self.eta_cutoff, self.eta_count)

    def xi_edges(self, j: int) -> np.ndarray:
        return self._edges(self.xi_cutoff[j], self.xi_count[j])

    def to_dict(self):
        return {
            "eta_cutoff": self.eta_cutoff,
            "eta_count": self.eta_count,
            "xi_cutoff": list(self.xi_cutoff),
            "xi_count": list(self.xi_count),
        }


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform grid: ``time_nodes`` on ``[0, t]`` and a box ``prod [lo_j, hi_j]``."""

    t: float
    time_nodes: int
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    space_nodes: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        n = tuple(int(v) for v in np.atleast_1d(self.space_nodes))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "space_nodes", n)
        if not (len(lo) == len(hi) == len(n)):
            raise ParameterError("box bounds and node counts differ in dimension")
        if any(not h > l for l, h in zip(lo, hi)) or any(k < 2 for k in n):
            raise ParameterError("box must be nondegenerate with >= 2 nodes per axis")
        if not self.t > 0 or self.time_nodes < 1:
            raise ParameterError("time horizon must be positive with >= 1 node")

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def times(self) -> np.ndarray:
        if self.time_nodes == 1:
            return np.zeros(1)
        return np.linspace(0.0, self.t, self.time_nodes)

    @property
    def dt(self) -> float:
        return self.t / (self.time_nodes - 1) if self.time_nodes > 1 else math.inf

    def axis(self, j: int) -> np.ndarray:
        return np.linspace(self.lo[j], self.hi[j], self.space_nodes[j])

    def spacing(self, j: int) -> float:
        return (self.hi[j] - self.lo[j]) / (self.space_nodes[j] - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.time_nodes, *self.space_nodes)

    @property
    def diameter(self) -> float:
        return math.sqrt(sum((h - l) ** 2 for l, h in zip(self.lo, self.hi)))

    def to_dict(self):
        return {
            "t": self.t,
            "time_nodes": self.time_nodes,
            "lo": list(self.lo),
            "hi": list(self.hi),
            "space_nodes": list(self.space_nodes),
        }


@dataclass(frozen=True)
class SpectralWeights:
    """Temporal and spatial frequency nodes with their (separable) cell weights."""

    eta: np.ndarray
    eta_weight: np.ndarray
    xi: tuple[np.ndarray, ...]
    xi_weight: tuple[np.ndarray, ...]
    time_total: float
    space_total: float

    @property
    def captured_fraction(self) -> float:
        """Lag-0 variance of the synthesized field over ``gamma_{0,delta}(0) gamma_eps(0)``."""
        return float(np.sum(self.eta_weight) * math.prod(np.sum(w) for w in self.xi_weight)) / (
            self.time_total * self.space_total
        )


def _sinc2(eta: np.ndarray, delta: float) -> np.ndarray:
    """``|F h_delta(eta)|^2`` for the box ``h_delta = 1_[0, delta] / delta``."""
    return np.sinc(eta * delta / (2.0 * math.pi)) ** 2


def spectral_weights(cov: PairedCovariance, epsilon: float, delta: float, freq: FrequencyGrid) -> SpectralWeights:
    if not (epsilon > 0 and delta > 0):
        raise ParameterError("epsilon and delta must be positive")
    if len(freq.xi_cutoff) != cov.d:
        raise ParameterError("frequency grid dimension differs from the covariance")
    k = cov.time
    edges = freq.eta_edges()
    mids = 0.5 * (edges[1:] + edges[:-1])
    cont = k.spectral_mass(edges[:-1], edges[1:]) * _sinc2(mids, delta)
    eta, w_eta = mids, cont
    atom = k.spectral_atom()
    if atom > 0:
        eta = np.concatenate([[0.0], mids])
        w_eta = np.concatenate([[atom], cont])
    keep = w_eta > 0
    eta, w_eta = eta[keep], w_eta[keep]
    xis, wxis = [], []
    for j, a in enumerate(cov.space.alphas):
        e = freq.xi_edges(j)
        xis.append(0.5 * (e[1:] + e[:-1]))
        wxis.append(gaussian_power_cell_mass(e[:-1], e[1:], a, epsilon))
    wxis[0] = wxis[0] * cov.space.cq
    return SpectralWeights(
        eta,
        w_eta,
        tuple(xis),
        tuple(wxis),
        float(k.smoothed(delta, 0.0)),
        cov.space.regularized_variance(epsilon),
    )


@dataclass(frozen=True)
class NoiseRealization:
    grid: SpaceTimeGrid
    values: np.ndarray = field(repr=False)
    epsilon: float
    delta: float
    seed: int
    covariance: PairedCovariance | None = None
    captured_fraction: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise GridMismatchError(f"values shape {v.shape} differs from grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ParameterError("noise values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)



def zero_noise(grid: SpaceTimeGrid) -> NoiseRealization:
    return NoiseRealization(grid, np.zeros(grid.shape), 1.0, 1.0, 0)


def _check_nyquist(grid: SpaceTimeGrid, freq: FrequencyGrid, sw: SpectralWeights):
    for j in range(grid.d):
        nyq = math.pi / grid.spacing(j)
        if freq.xi_cutoff[j] > nyq * (1 + 1e-12):
            raise ParameterError(
                f"xi cutoff {freq.xi_cutoff[j]} exceeds the Nyquist frequency {nyq:.6g} on axis {j}"
            )
    if grid.time_nodes > 1 and np.max(np.abs(sw.eta)) > math.pi / grid.dt * (1 + 1e-12):
        raise ParameterError(f"eta cutoff exceeds the temporal Nyquist frequency {math.pi / grid.dt:.6g}")


def synthesize_noise(
    seed: int,
    cov: PairedCovariance,
    epsilon: float,
    delta: float,
    grid: SpaceTimeGrid,
    freq: FrequencyGrid,
    index: int = 0,
    weights: SpectralWeights | None = None,
) -> NoiseRealization:
    """One realization on ``grid``; ``index`` selects an independent substream.

    A purely constant time kernel puts all temporal mass at ``eta = 0``, so
    every time slice of the realization is the same spatial field. Passing a
    grid with a single time node stores that field once.
    """
    if grid.d != cov.d:
        raise ParameterError("grid and covariance dimensions differ")
    sw = weights if weights is not None else spectral_weights(cov, epsilon, delta, freq)
    _check_nyquist(grid, freq, sw)
    static = sw.eta.size == 1 and sw.eta[0] == 0.0
    rng = derive_rng(seed, STREAM_NOISE, index)
    shape = (sw.eta.size, *[x.size for x in sw.xi])
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5)
    amp = np.sqrt(2.0 * sw.eta_weight).reshape((-1,) + (1,) * grid.d)
    for j, w in enumerate(sw.xi_weight):
        sh = [1] * (grid.d + 1)
        sh[j + 1] = -1
        amp = amp * np.sqrt(w).reshape(sh)
    coef = z * amp
    # contract the temporal frequency axis, then each spatial axis in turn
    times = grid.times[:1] if static else grid.times
    phase_t = np.exp(1j * np.outer(times, sw.eta))
    field_c = np.tensordot(phase_t, coef, axes=([1], [0]))
    for j in range(grid.d):
        phase = np.exp(1j * np.outer(sw.xi[j], grid.axis(j)))
        field_c = np.moveaxis(np.tensordot(field_c, phase, axes=([1 + j], [0])), -1, 1 + j)
    values = field_c.real
    if static and grid.time_nodes > 1:
        values = np.repeat(values, grid.time_nodes, axis=0)
    return NoiseRealization(grid, values, epsilon, delta, seed, cov, sw.captured_fraction)


def truncated_covariance_oracle(
    cov: PairedCovariance, epsilon: float, delta: float, freq: FrequencyGrid, tau: float, h: Sequence[float]
) -> float:
    """Adaptive quadrature of the truncated spectral covariance at lags ``(tau, h)``."""
    h = np.atleast_1d(np.asarray(h, dtype=float))
    k = cov.time
    t_part = k.spectral_atom()
    H = freq.eta_cutoff
    for part in k.parts():
        if part.spectral_atom() > 0:
            continue
        f = lambda e, p=part: float(p.spectral_density(e)) * math.cos(e * tau) * float(_sinc2(np.array(e), delta))
        t_part += 2.0 * integrate.quad(f, 0.0, H, limit=500, epsabs=1e-12, epsrel=1e-10)[0]
    s_part = cov.space.cq
    for j, a in enumerate(cov.space.alphas):
        X = freq.xi_cutoff[j]
        g = lambda xi, a=a, hj=h[j]: xi ** (a - 1.0) * math.exp(-epsilon * xi * xi) * math.cos(xi * hj)
        s_part *= 2.0 * integrate.quad(g, 0.0, X, limit=500, epsabs=1e-12, epsrel=1e-10)[0]
    return t_part * s_part


def _snap(u):
    """Round fractional node coordinates within 1e-9 of an integer, so nodes are hit exactly."""
    r = np.rint(u)
    return np.where(np.abs(u - r) < 1e-9, r, u)


def evaluate_noise(nr: NoiseRealization, s, x) -> np.ndarray | float:
    """Multilinear interpolation of the grid values at times ``s`` and points ``x``.

    ``s`` broadcasts against ``x[..., 0]``; queries outside the box raise.
    """
    g = nr.grid
    x = np.asarray(x, dtype=float)
    if g.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    s = np.broadcast_to(np.asarray(s, dtype=float), x.shape[:-1])
    tol = 1e-9
    if np.any(s < -tol) or np.any(s > g.t + tol):
        raise BoxOverflowError("time query outside [0, t]")
    idx_f, frac = [], []
    if g.time_nodes > 1:
        u = _snap(np.clip(s / g.dt, 0.0, g.time_nodes - 1))
        i0 = np.minimum(np.floor(u).astype(np.int64), g.time_nodes - 2)
        idx_f.append(i0)
        frac.append(u - i0)
    for j in range(g.d):
        xj = x[..., j]
        if np.any(xj < g.lo[j] - tol) or np.any(xj > g.hi[j] + tol):
            raise BoxOverflowError(f"space query outside the box on axis {j}")
        u = _snap(np.clip((xj - g.lo[j]) / g.spacing(j), 0.0, g.space_nodes[j] - 1))
        i0 = np.minimum(np.floor(u).astype(np.int64), g.space_nodes[j] - 2)
        idx_f.append(i0)
        frac.append(u - i0)
    vals = nr.values if g.time_nodes > 1 else nr.values[0]
    out = np.zeros(x.shape[:-1])
    m = len(idx_f)
    for corner in range(1 << m):
        w = np.ones(x.shape[:-1])
        idx = []
        for a in range(m):
            bit = (corner >> a) & 1
            w = w * (frac[a] if bit else 1.0 - frac[a])
            idx.append(idx_f[a] + bit)
        out = out + w * vals[tuple(idx)]
    return float(out) if out.ndim == 0 else out


def empirical_covariance(realizations: Sequence[NoiseRealization], time_lag: int, space_lag: Sequence[int]):
    """Cross-realization estimate of ``E W(s, x) W(s + tau, x + h)`` at integer node lags.

    Each realization contributes the mean of ``W(n) W(n + lag)`` over all
    translated node pairs inside the grid; the estimate is the mean over
    realizations with its standard error. The field is centered, so the
    product average is unbiased.
    """
    if len(realizations) < 2:
        raise ParameterError("need at least two realizations")
    g = realizations[0].grid
    if any(r.grid != g for r in realizations):
        raise GridMismatchError("realizations live on different grids")
    lags = [int(time_lag), *[int(v) for v in np.atleast_1d(space_lag)]]
    if len(lags) != g.d + 1:
        raise ParameterError("space lag has the wrong dimension")
    shape = realizations[0].values.shape
    if any(abs(l) >= n for l, n in zip(lags, shape)):
        raise ParameterError("lag exceeds the grid: no admissible node pairs")
    a_sl, b_sl = [], []
    for l, n in zip(lags, shape):
        if l >= 0:
            a_sl.append(slice(0, n - l))
            b_sl.append(slice(l, n))
        else:
            a_sl.append(slice(-l, n))
            b_sl.append(slice(0, n + l))
    per = np.array([np.mean(r.values[tuple(a_sl)] * r.values[tuple(b_sl)]) for r in realizations])
    return float(per.mean()), float(per.std(ddof=1) / math.sqrt(per.size))


# ---------------------------------------------------------------------------
# binary layout (little endian):
#   8s magic "RPAMNOI1" | u32 d | u32 time_nodes | u32 space_nodes[d]
#   f64 t | f64 lo[d] | f64 hi[d] | f64 epsilon | f64 delta | u64 seed
#   f64 captured_fraction | f64 values[...] row-major, time axis first

MAGIC = b"RPAMNOI1"


def write_binary(nr: NoiseRealization, fh) -> None:
    g = nr.grid
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", g.d, g.time_nodes))
    buf.write(struct.pack(f"<{g.d}I", *g.space_nodes))
    buf.write(struct.pack("<d", g.t))
    buf.write(struct.pack(f"<{g.d}d", *g.lo))
    buf.write(struct.pack(f"<{g.d}d", *g.hi))
    buf.write(struct.pack("<ddQd", nr.epsilon, nr.delta, nr.seed, nr.captured_fraction))
    buf.write(np.ascontiguousarray(nr.values, dtype="<f8").tobytes())
    fh.write(buf.getvalue())


def read_binary(fh) -> NoiseRealization:
    data = fh.read()
    if data[:8] != MAGIC:
        raise ParameterError("not a noise realization dump")
    off = 8
    d, nt = struct.unpack_from("<II", data, off)
    off += 8
    ns = struct.unpack_from(f"<{d}I", data, off)
    off += 4 * d
    (t,) = struct.unpack_from("<d", data, off)
    off += 8
    lo = struct.unpack_from(f"<{d}d", data, off)
    off += 8 * d
    hi = struct.unpack_from(f"<{d}d", data, off)
    off += 8 * d
    eps, delta, seed, frac = struct.unpack_from("<ddQd", data, off)
    off += 32
    grid = SpaceTimeGrid(t, nt, lo, hi, ns)
    vals = np.frombuffer(data, dtype="<f8", offset=off).reshape(grid.shape).copy()
    return NoiseRealization(grid, vals, eps, delta, seed, None, frac)
