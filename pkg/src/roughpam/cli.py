"""``roughpam`` command line: one subcommand per pipeline, CSV + JSON outputs in ``--out``."""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import RoughPamError
from .experiments import (
    CLASSIFIER_RADII,
    provenance,
    run_decay_experiment,
    run_growth_experiment,
    run_localization_study,
    run_validation_suite,
    write_csv,
    write_json,
)
from .feynman_kac import jensen_lower_bound, moment_curve, pointwise_fk
from .initial import classify_case
from .kernels import RegularizedSpaceKernel, regularized_factor_exact
from .noise import synthesize_noise, write_binary
from .paths import BridgeSpec, PathGrid, sample_bm, sample_bridge
from .variational import kappa, legendre_consistency, solve

COMMANDS = (
    "kernel-table",
    "sample-paths",
    "synth-noise",
    "fk-point",
    "fk-moment",
    "spatial-asymptotics",
    "tail-decay",
    "variational",
    "localize-study",
    "classify-initial",
    "validate",
)


def _emit(out: Path, stem: str, header=None, rows=None, summary=None):
    out.mkdir(parents=True, exist_ok=True)
    if header is not None:
        write_csv(out / f"{stem}.csv", header, rows)
    if summary is not None:
        write_json(out / f"{stem}.json", summary)


def cmd_kernel_table(cfg: ExperimentConfig, args) -> int:
    count = args.count * (2 if args.refine else 1)
    xs = np.linspace(0.0, args.x_max, count)
    space = cfg.cov.space
    reg = RegularizedSpaceKernel(space, cfg.epsilon)
    facs = [[regularized_factor_exact(a, cfg.epsilon, x) for a in space.alphas] for x in xs]
    gam = reg(np.repeat(xs[:, None], cfg.d, axis=1))
    header = ["x", "gamma_eps"] + [f"factor_{j + 1}" for j in range(cfg.d)]
    rows = [[x, g, *f] for x, g, f in zip(xs, np.atleast_1d(gam), facs)]
    summary = {"evaluated_at": "(x, ..., x)", "count": count, "epsilon": cfg.epsilon,
               "gamma_eps_0": space.regularized_variance(cfg.epsilon), **provenance(cfg)}
    _emit(args.out, "kernel_table", header, rows, summary)
    return 0


def cmd_sample_paths(cfg: ExperimentConfig, args) -> int:
    steps = cfg.steps * (2 if args.refine else 1)
    grid = PathGrid(cfg.t, steps)
    x = np.asarray(cfg.x)
    rows = []
    for i in range(args.n):
        if args.kind == "bridge":
            p = sample_bridge(cfg.seed, grid, BridgeSpec(cfg.t, x, x), i)
        else:
            p = sample_bm(cfg.seed, grid, x, i)
        for step, (s, pos) in enumerate(zip(grid.times, p.positions)):
            rows.append([i, step, s, *pos])
    header = ["path_index", "step", "time"] + [f"x_{j + 1}" for j in range(cfg.d)]
    _emit(args.out, "paths", header, rows, {"kind": args.kind, "n": args.n, "steps": steps, **provenance(cfg)})
    return 0


def cmd_synth_noise(cfg: ExperimentConfig, args) -> int:
    freq = cfg.frequency_grid()
    if args.refine:
        from .noise import FrequencyGrid
        freq = FrequencyGrid(freq.eta_cutoff, 2 * freq.eta_count, freq.xi_cutoff,
                             tuple(2 * n for n in freq.xi_count))
    grid = cfg.noise_box()
    nr = synthesize_noise(cfg.seed, cfg.cov, cfg.epsilon, cfg.delta, grid, freq)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "noise.bin", "wb") as fh:
        write_binary(nr, fh)
    axes = [grid.times] + [grid.axis(j) for j in range(cfg.d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    cols = [m.ravel() for m in mesh] + [nr.values.ravel()]
    header = ["time"] + [f"x_{j + 1}" for j in range(cfg.d)] + ["value"]
    summary = {"grid": grid.to_dict(), "frequency": freq.to_dict(), "captured_fraction": nr.captured_fraction,
               "sample_variance": float(np.var(nr.values)), **provenance(cfg)}
    _emit(args.out, "noise", header, zip(*cols), summary)
    return 0


def cmd_fk_point(cfg: ExperimentConfig, args) -> int:
    x = np.asarray(cfg.x)
    grid = cfg.noise_box(float(np.linalg.norm(x)))
    nr = synthesize_noise(cfg.seed, cfg.cov, cfg.epsilon, cfg.delta, grid, cfg.frequency_grid())
    n = cfg.n_paths * (2 if args.refine else 1)
    est = pointwise_fk(nr, cfg.t, x, cfg.measure, cfg.theta, n, cfg.seed, cfg.steps)
    header = [f"x_{j + 1}" for j in range(cfg.d)] + ["value", "standard_error", "log_value", "exit_fraction"]
    rows = [[*x, est.value, est.standard_error, est.log_value, est.exit_fraction]]
    summary = {"value": est.value, "standard_error": est.standard_error, "log_value": est.log_value,
               "n_paths": n, "x": list(x), **provenance(cfg)}
    _emit(args.out, "fk_point", header, rows, summary)
    return 0


def cmd_fk_moment(cfg: ExperimentConfig, args) -> int:
    steps = cfg.steps * (2 if args.refine else 1)
    est = moment_curve(cfg.orders, cfg.t, np.asarray(cfg.x), cfg.measure, cfg.theta, cfg.epsilon,
                       cfg.n_samples, cfg.seed, cov=cfg.cov, steps=steps, workers=cfg.workers)
    jb = jensen_lower_bound(cfg.t, cfg.theta, cfg.cov, cfg.epsilon)
    header = ["order", "value", "standard_error", "log_value", "root"]
    rows = [[e.order, e.value, e.standard_error, e.log_value, math.exp(e.log_value / e.order)] for e in est]
    summary = {"moments": [e.__dict__ for e in est], "jensen_first_moment_factor": jb, "steps": steps,
               **provenance(cfg)}
    _emit(args.out, "fk_moment", header, rows, summary)
    return 0


def cmd_spatial(cfg: ExperimentConfig, args) -> int:
    rep = run_growth_experiment(cfg, refine=args.refine)
    ex = rep.extra
    power = 2.0 / (4.0 - cfg.cov.space.alpha_total)
    rows = [[R, math.log(R) ** power, lm, la] for R, lm, la in zip(ex["radii"], ex["log_max"], ex["annulus"]["log_max"])]
    _emit(args.out, "spatial_asymptotics", ["R", "abscissa", "log_max_ball", "log_max_annulus"], rows,
          rep.to_dict() | provenance(cfg))
    return 0


def cmd_tail_decay(cfg: ExperimentConfig, args) -> int:
    rep = run_decay_experiment(cfg, refine=args.refine)
    ex = rep.extra
    rows = list(zip(ex["radii"], ex["nu"], ex["log_max"]))
    _emit(args.out, "tail_decay", ["R", "nu", "log_max"], rows, rep.to_dict() | provenance(cfg))
    return 0


def cmd_variational(cfg: ExperimentConfig, args) -> int:
    res = solve(cfg.disc, cfg.t, cfg.theta, cfg.cov)
    summary = {"result": res.to_dict(), "discretization": cfg.disc.to_dict()}
    alpha = cfg.cov.space.alpha_total
    if cfg.theta != 0:
        e1 = res.value / abs(cfg.theta) ** (2.0 / (2.0 - alpha))
        summary["E_t_unit_theta"] = e1
        summary["kappa"] = kappa(cfg.theta, cfg.t, alpha, cfg.d, e1)
        leg = legendre_consistency(cfg.theta, cfg.t, alpha, e1)
        summary["legendre"] = {"numeric": leg.numeric_sup, "closed_form": leg.closed_form,
                               "relative_gap": leg.relative_gap}
    if args.refine:
        fine = solve(cfg.disc.refined(), cfg.t, cfg.theta, cfg.cov)
        summary["refine"] = {"discretization": cfg.disc.refined().to_dict(), "value": fine.value,
                             "change": fine.value - res.value}
    summary.update(provenance(cfg))
    header = rows = None
    if cfg.d == 1:
        vals = np.asarray(res.profile.values)
        header = ["x"] + [f"s_{i}" for i in range(vals.shape[0])]
        rows = [[x, *vals[:, k]] for k, x in enumerate(cfg.disc.axis())]
    _emit(args.out, "variational", header, rows, summary)
    return 0


def cmd_localize(cfg: ExperimentConfig, args) -> int:
    res = run_localization_study(cfg)
    spec = dict(zip(res["spectral"]["b"], res["spectral"]["value"]))
    fk = {r["b"]: r for r in res["fk"]}
    rows = []
    for b in sorted(set(spec) | set(fk)):
        rows.append([b, spec.get(b, ""), fk[b]["gap"] if b in fk else "", fk[b]["gap_se"] if b in fk else "",
                     res["spectral"]["slope"], res["fk_gap_slope"]])
    header = ["b", "spectral_gap", "fk_gap", "fk_gap_se", "spectral_slope", "fk_slope"]
    _emit(args.out, "localize_study", header, rows, res | provenance(cfg))
    return 0


def cmd_classify(cfg: ExperimentConfig, args) -> int:
    v = classify_case(cfg.measure, cfg.t, cfg.cov.space.alpha_total, CLASSIFIER_RADII, cfg.d)
    rows = list(zip(v.radii, v.ratio_in, v.ratio_out))
    _emit(args.out, "classify_initial", ["R", "ratio_in", "ratio_out"], rows, v.to_dict() | provenance(cfg))
    return 0


def cmd_validate(cfg: ExperimentConfig, args) -> int:
    ledger = run_validation_suite(cfg, quick=not args.refine)
    _emit(args.out, "validate", summary=ledger)
    for c in ledger["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}")
    return 0 if ledger["passed"] else 1


HANDLERS = {
    "kernel-table": cmd_kernel_table,
    "sample-paths": cmd_sample_paths,
    "synth-noise": cmd_synth_noise,
    "fk-point": cmd_fk_point,
    "fk-moment": cmd_fk_moment,
    "spatial-asymptotics": cmd_spatial,
    "tail-decay": cmd_tail_decay,
    "variational": cmd_variational,
    "localize-study": cmd_localize,
    "classify-initial": cmd_classify,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML experiment config")
    common.add_argument("--seed", type=int, default=None, help="override run.seed")
    common.add_argument("--workers", type=int, default=None, help="override run.workers")
    common.add_argument("--out", type=Path, default=None, help="output directory (default output.dir)")
    common.add_argument("--refine", action="store_true", help="double one resolution axis")
    p = argparse.ArgumentParser(prog="roughpam", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "kernel-table":
            sp.add_argument("--x-max", type=float, default=4.0)
            sp.add_argument("--count", type=int, default=401)
        elif name == "sample-paths":
            sp.add_argument("--n", type=int, default=5)
            sp.add_argument("--kind", choices=("bm", "bridge"), default="bridge")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        over = {}
        if args.seed is not None:
            over["run.seed"] = args.seed
        if args.workers is not None:
            over["run.workers"] = args.workers
        if over:
            cfg = cfg.replace(**over)
        args.out = args.out if args.out is not None else Path(cfg.out_dir)
        return HANDLERS[args.command](cfg, args)
    except (RoughPamError, OSError) as exc:
        print(f"roughpam {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
