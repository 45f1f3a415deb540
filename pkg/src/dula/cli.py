"""Command-line entry point ``dula-sim``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, harness, schedules, topology
from .errors import DulaError

log = logging.getLogger("dula")


def _load(args, kind=None):
    if getattr(args, "config", None):
        cfg = harness.ExperimentConfig.from_file(args.config)
    elif kind is not None:
        cfg = harness.ExperimentConfig.preset(kind)
    else:
        raise DulaError("--config is required")
    over = {"experiment": {}}
    if getattr(args, "seed", None) is not None:
        over["experiment"]["base_seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        over["experiment"]["threads"] = args.threads
    if getattr(args, "replications", None) is not None:
        over["experiment"]["replications"] = args.replications
    cfg = cfg.replace(**over)
    if getattr(args, "full_scale", False):
        cfg = cfg.with_full_scale()
    return cfg


def cmd_validate(args):
    cfg = _load(args)
    n = int(cfg["topology"]["n"])
    graph = harness.build_graph(cfg, n)
    spec = topology.spectral_summary(graph)
    sched = harness.build_schedule(cfg, graph)
    verdict = schedules.validate(sched)
    bv = topology.validate_b(graph, sched.b) if graph.n > 1 else None
    print(f"agents: {graph.n}  edges: {len(graph.edges)}  connected: {spec.connected}")
    print(f"lambda2: {spec.lambda2:.6g}  sigma_max: {spec.sigma_max:.6g}")
    print(f"schedule: a={sched.a:.6g} b={sched.b:.6g} delta1={sched.delta1:g} "
          f"delta2={sched.delta2:g} offset1={sched.offset1:g} offset2={sched.offset2:g}")
    if bv is not None:
        print(f"b admissible: {bv.admissible}  (1 - b*sigma_max = {bv.margin:.6g})")
    for v in verdict.violations:
        tag = "ERROR" if v in verdict.fatal else "WARNING"
        print(f"{tag}: {v}")
    ok = spec.connected and not verdict.fatal and (bv is None or bv.admissible)
    print("OK" if ok else "INVALID")
    return 0 if ok else 1


def cmd_run(args):
    cfg = _load(args)
    kind = cfg["experiment"]["kind"]
    if kind == "gm":
        return _gm(cfg, args.out)
    if kind == "logreg":
        return _logreg(cfg, args.out)
    logs = harness.run_custom(cfg, args.out)
    for lg in logs:
        c = lg.consensus
        last = f"{c[-1, 1]:.4g}" if len(c) else "n/a"
        print(f"{lg.metadata['engine']} seed={lg.metadata['seed']} samples={len(lg.samples)} "
              f"final consensus error={last}")
    print(f"outputs in {args.out}")
    return 0


def _gm(cfg, out):
    res = harness.run_gm_experiment(cfg, out)
    rows = [(r.n, r.engine, r.seed, r.distance, r.min_mode_mass[0], r.min_mode_mass[1], r.seconds)
            for r in res.rows]
    print(f"alpha0={res.schedule_params['alpha0']:.6g} b1={res.schedule_params['b1']:.6g}")
    print(harness.format_table(rows, ["n", "engine", "seed", "d_M", "mass[0,1]", "mass[1,-1]", "seconds"]),
          end="")
    print(f"outputs in {out}")
    return 0


def _logreg(cfg, out):
    res = harness.run_logreg_experiment(cfg, out)
    print(f"data: {res.source}")
    print(harness.format_table(res.final_table(),
                               ["engine", "agents", "mean_acc", "std_acc", "spread", "map_acc"]), end="")
    print(f"outputs in {out}")
    return 0


def cmd_gm(args):
    return _gm(_load(args, "gm"), args.out)


def cmd_logreg(args):
    return _logreg(_load(args, "logreg"), args.out)


def cmd_diagnose(args):
    """Recompute Sinkhorn distances and consensus bounds from a run directory."""
    run_dir = Path(args.run)
    lg = harness.load_run(run_dir)
    cfg = harness.ExperimentConfig(lg.metadata.get("config", {}))
    h = lg.metadata.get("config_hash", "")
    n = int(lg.metadata.get("n_agents", 1))
    out = Path(args.out or run_dir)
    out.mkdir(parents=True, exist_ok=True)

    srows = []
    if cfg["model"]["kind"] == "gm" and len(lg.samples):
        grid = diagnostics.GridSpec(step=float(cfg["diagnostics"]["grid_step"]))
        ref = diagnostics.gm_reference_posterior(harness.gm_data(cfg), grid)
        lam = float(cfg["diagnostics"]["lam"])
        for agent in [*range(n), "pooled"]:
            s = lg.pooled_samples() if agent == "pooled" else lg.samples[:, agent]
            r = diagnostics.sinkhorn_distance(diagnostics.histogram_on_grid(s, grid), ref, lam)
            srows.append([agent, repr(r.distance), int(r.converged), r.iterations, h])
    harness._write_csv(out / "sinkhorn.csv", ["agent", "d_M", "converged", "iterations", "config_hash"], srows)

    brows = []
    if n > 1 and len(lg.consensus):
        sched_meta = lg.metadata.get("schedule")
        graph = harness.build_graph(cfg, n)
        sched = (schedules.StepSchedule(**sched_meta) if sched_meta
                 else harness.build_schedule(cfg, graph))
        plain = schedules.StepSchedule(sched.a, sched.b, sched.delta1, sched.delta2)
        try:
            c = diagnostics.bound_constants(graph, plain, args.mu_g, int(lg.metadata.get("d_w", 1)),
                                            args.e_w0_sq)
            bounds = diagnostics.consensus_bound(c, lg.consensus[:, 0] - 1)
        except DulaError as err:
            log.warning("bound unavailable: %s", err)
            bounds = np.full(len(lg.consensus), math.nan)
        for (it, err_sq, _), b in zip(lg.consensus, np.atleast_1d(bounds)):
            brows.append([int(it), repr(float(err_sq)), repr(float(b)), int(err_sq <= b), h])
    harness._write_csv(out / "bounds.csv", ["iter", "error_sq", "bound", "within", "config_hash"], brows)
    print(json.dumps({"sinkhorn_rows": len(srows), "bound_rows": len(brows), "out": str(out)}))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="dula-sim", description="Decentralized Langevin sampling simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default="dula-out")
        sp.add_argument("--threads", type=int, help="worker processes (0 = one per core)")
        sp.add_argument("--full-scale", action="store_true", help="1e6-step mixture runs")
        sp.add_argument("--replications", type=int)

    sp = sub.add_parser("run", help="run the experiment described by a config file")
    common(sp, True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("validate", help="check topology, consensus gain and step-size conditions")
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("gm-experiment", help="Gaussian-mixture posterior quality for n = 1, 5, 10")
    common(sp, False)
    sp.set_defaults(func=cmd_gm)

    sp = sub.add_parser("logreg-experiment", help="Bayesian logistic regression accuracy")
    common(sp, False)
    sp.set_defaults(func=cmd_logreg)

    sp = sub.add_parser("diagnose", help="Sinkhorn distances and consensus bounds for a run directory")
    sp.add_argument("--run", required=True)
    sp.add_argument("--out")
    sp.add_argument("--mu-g", type=float, default=1.0)
    sp.add_argument("--e-w0-sq", type=float, default=0.0)
    sp.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DulaError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
