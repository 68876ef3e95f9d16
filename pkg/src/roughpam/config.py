"""Experiment configuration: a YAML tree validated into frozen blocks.

Schema (all blocks optional; missing keys take the defaults below)::

    kernel:
      space: {alphas: [1.3], cq: 1.0}
      time: {type: constant, c: 1.0}        # or {type: riesz, c, alpha0} / {type: sum, terms: [...]}
    regularization: {epsilon: 0.05, delta: 0.1}
    paths: {steps: 32}
    noise:
      margin: 14.0          # added to the largest radius on every side of the box
      spacing: 0.05         # spatial node spacing
      time_nodes: 1         # 1 stores a static field (constant time kernel only)
      xi_cutoff: null       # default sqrt(30 / epsilon), clipped to Nyquist
      xi_count: 4000
      eta_cutoff: 60.0
      eta_count: 1200
    measure: {type: unit}   # unit | dirac | atoms {points, weights} | log_growth
    run:
      t: 1.0
      theta: 1.0
      x: [0.0]
      radii: [4, 8, 16, 32, 64, 128, 256]
      fit_drop: 2
      grid_density: 2.0
      n_paths: 400
      n_samples: 10000
      orders: [1, 2, 3, 4]
      annulus_k: 0.5
      seed: 0
      workers: 1
    variational: {S: 16, n: 128, A: 0.4}
    localization: {bs: [8, 64, 512], spectral_bs: [2, 8, 32, 128], n_samples: 2000}
    output: {dir: out}
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ParameterError
from .initial import InitialMeasure, measure_from_dict
from .kernels import PairedCovariance, SpaceSpectralDensity, TimeKernel, time_kernel_from_dict
from .noise import FrequencyGrid, SpaceTimeGrid
from .variational import Discretization

__all__ = ["ExperimentConfig", "DEFAULTS", "load_config", "config_from_dict", "config_hash"]

DEFAULTS: dict = {
    "kernel": {"space": {"alphas": [1.3], "cq": 1.0}, "time": {"type": "constant", "c": 1.0}},
    "regularization": {"epsilon": 0.05, "delta": 0.1},
    "paths": {"steps": 32},
    "noise": {
        "margin": 14.0,
        "spacing": 0.05,
        "time_nodes": 1,
        "xi_cutoff": None,
        "xi_count": 4000,
        "eta_cutoff": 60.0,
        "eta_count": 1200,
    },
    "measure": {"type": "unit"},
    "run": {
        "t": 1.0,
        "theta": 1.0,
        "x": [0.0],
        "radii": [4, 8, 16, 32, 64, 128, 256],
        "fit_drop": 2,
        "grid_density": 2.0,
        "n_paths": 400,
        "n_samples": 10000,
        "orders": [1, 2, 3, 4],
        "annulus_k": 0.5,
        "seed": 0,
        "workers": 1,
    },
    "variational": {"S": 16, "n": 128, "A": 0.4},
    "localization": {"bs": [8, 64, 512], "spectral_bs": [2, 8, 32, 128], "n_samples": 2000},
    "output": {"dir": "out"},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in (over or {}).items():
        if key not in base:
            raise ParameterError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and key not in ("space", "time") and path + key != "measure":
            if not isinstance(val, dict):
                raise ParameterError(f"config key {path + key!r} must be a mapping")
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _positive(name: str, v) -> float:
    v = float(v)
    if not (math.isfinite(v) and v > 0.0):
        raise ParameterError(f"{name} must be positive, got {v}")
    return v


def _positive_int(name: str, v) -> int:
    if int(v) != v or int(v) < 1:
        raise ParameterError(f"{name} must be a positive integer, got {v}")
    return int(v)


@dataclass(frozen=True)
class ExperimentConfig:
    tree: dict
    cov: PairedCovariance
    measure: InitialMeasure
    epsilon: float
    delta: float
    steps: int
    t: float
    theta: float
    x: tuple[float, ...]
    radii: tuple[float, ...]
    fit_drop: int
    grid_density: float
    n_paths: int
    n_samples: int
    orders: tuple[int, ...]
    annulus_k: float
    seed: int
    workers: int
    disc: Discretization
    bs: tuple[float, ...]
    spectral_bs: tuple[float, ...]
    loc_samples: int
    out_dir: str

    @property
    def d(self) -> int:
        return self.cov.d

    @property
    def hash(self) -> str:
        return config_hash(self.tree)

    def replace(self, **updates) -> "ExperimentConfig":
        """A new config with dotted-key overrides, e.g. ``{"run.seed": 3}``."""
        tree = copy.deepcopy(self.tree)
        for dotted, val in updates.items():
            node = tree
            keys = dotted.split(".")
            for k in keys[:-1]:
                node = node[k]
            node[keys[-1]] = val
        return config_from_dict(tree)

    def noise_box(self, radius: float | None = None) -> SpaceTimeGrid:
        """Box covering ``radius`` (default: the largest radius) plus the margin."""
        nz = self.tree["noise"]
        r = (max(self.radii) if radius is None else radius) + float(nz["margin"])
        h = float(nz["spacing"])
        n = int(math.ceil(2.0 * r / h)) + 1
        half = 0.5 * (n - 1) * h
        return SpaceTimeGrid(self.t, int(nz["time_nodes"]), (-half,) * self.d, (half,) * self.d, (n,) * self.d)

    def frequency_grid(self) -> FrequencyGrid:
        nz = self.tree["noise"]
        h = float(nz["spacing"])
        cut = nz["xi_cutoff"]
        cut = math.sqrt(30.0 / self.epsilon) if cut is None else float(cut)
        cut = min(cut, math.pi / h)
        return FrequencyGrid(
            float(nz["eta_cutoff"]), int(nz["eta_count"]), (cut,) * self.d, (int(nz["xi_count"]),) * self.d
        )


def config_from_dict(raw: dict | None) -> ExperimentConfig:
    """Validate a (partial) tree against the schema; raises ``ParameterError``."""
    tree = _merge(DEFAULTS, raw or {})
    sp = tree["kernel"]["space"]
    space = SpaceSpectralDensity(tuple(sp.get("alphas", [1.3])), float(sp.get("cq", 1.0)))
    time = time_kernel_from_dict(tree["kernel"]["time"])
    if not isinstance(time, TimeKernel):
        raise ParameterError("bad time kernel block")
    cov = PairedCovariance(space, time)
    reg = tree["regularization"]
    eps = _positive("regularization.epsilon", reg["epsilon"])
    delta = _positive("regularization.delta", reg["delta"])
    run = tree["run"]
    radii = tuple(float(r) for r in run["radii"])
    if len(radii) < 3 or any(r <= 0 for r in radii) or np.any(np.diff(radii) <= 0):
        raise ParameterError("run.radii must be positive, strictly increasing, at least three")
    fit_drop = int(run["fit_drop"])
    if not 0 <= fit_drop <= len(radii) - 3:
        raise ParameterError("run.fit_drop must leave at least three radii")
    orders = tuple(_positive_int("run.orders", n) for n in run["orders"])
    k = float(run["annulus_k"])
    if not 0.0 <= k < 1.0:
        raise ParameterError("run.annulus_k must lie in [0, 1)")
    x = tuple(float(v) for v in np.atleast_1d(run["x"]))
    if len(x) != space.d:
        raise ParameterError(f"run.x has {len(x)} coordinates, the kernel has d = {space.d}")
    nz = tree["noise"]
    _positive("noise.spacing", nz["spacing"])
    _positive("noise.margin", nz["margin"])
    tn = _positive_int("noise.time_nodes", nz["time_nodes"])
    if tn == 1 and any(p.__class__.__name__ != "Constant" for p in time.parts()):
        raise ParameterError("a single noise time node needs a constant time kernel")
    seed = int(run["seed"])
    if not 0 <= seed < 2**64:
        raise ParameterError("run.seed must be an unsigned 64-bit integer")
    v = tree["variational"]
    disc = Discretization(_positive_int("variational.S", v["S"]), _positive_int("variational.n", v["n"]),
                          _positive("variational.A", v["A"]), space.d)
    loc = tree["localization"]
    bs = tuple(float(b) for b in loc["bs"])
    sbs = tuple(float(b) for b in loc["spectral_bs"])
    for b in bs + sbs:
        if not b > 1.0:
            raise ParameterError("localization bandwidths must exceed 1")
    return ExperimentConfig(
        tree=tree,
        cov=cov,
        measure=measure_from_dict(tree["measure"], space.d),
        epsilon=eps,
        delta=delta,
        steps=_positive_int("paths.steps", tree["paths"]["steps"]),
        t=_positive("run.t", run["t"]),
        theta=float(run["theta"]),
        x=x,
        radii=radii,
        fit_drop=fit_drop,
        grid_density=_positive("run.grid_density", run["grid_density"]),
        n_paths=_positive_int("run.n_paths", run["n_paths"]),
        n_samples=_positive_int("run.n_samples", run["n_samples"]),
        orders=orders,
        annulus_k=k,
        seed=seed,
        workers=_positive_int("run.workers", run["workers"]),
        disc=disc,
        bs=bs,
        spectral_bs=sbs,
        loc_samples=_positive_int("localization.n_samples", loc["n_samples"]),
        out_dir=str(tree["output"]["dir"]),
    )


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({})
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ParameterError("config root must be a mapping")
    return config_from_dict(raw)


def config_hash(tree: dict) -> str:
    """SHA-256 of the canonical JSON of the validated tree.

    Worker count and output directory do not change results, so they are
    excluded from the hash.
    """
    t = copy.deepcopy(tree)
    t["run"].pop("workers", None)
    t.pop("output", None)
    blob = json.dumps(t, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()
