"""Command-line experiment runner: ``monofollow solve|ladder|stop|repro|mzdist``.

Exit codes: 0 success, 2 configuration error or unverified coercivity,
3 solver nonconvergence, 4 certificate or check failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import repro as repro_mod
from .artifacts import plan_to_dict, write_csv, write_json, write_manifest
from .config import ExperimentConfig
from .errors import ConfigError
from .lattice import TimeGrid
from .meyer_zheng import (DICTIONARY_VERSION, WeightedPaths, control_paths, distance_matrix,
                          findim_marginal_distance)
from .pontryagin import capped_kkt_identities, certify, compute_adjoint
from .solver import LADDER_COLUMNS, CoercivityUnverified, run_ladder, solve_capped, solve_uncapped
from .stopping import (STOP_REGION_COLUMNS, equivalence_check, payoff_process, snell_min,
                       stop_region_rows)

log = logging.getLogger("monotone_follower")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_CHECK = 0, 2, 3, 4
THREADS_ENV = "MONOFOLLOW_THREADS"
PLAN_COLUMNS = ["node", "time_index", "time", "L", "increment", "level", "adjoint"]


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


class _Run:
    """Collects written artifacts and finishes with the manifest."""

    def __init__(self, out_dir: Path, command: str):
        self.out_dir = Path(out_dir)
        self.command = command
        self.written = []

    def json(self, name: str, doc) -> None:
        self.written.append(write_json(self.out_dir / name, doc))
        log.info("wrote %s", name)

    def csv(self, name: str, columns, rows) -> None:
        self.written.append(write_csv(self.out_dir / name, columns, rows))
        log.info("wrote %s", name)

    def close(self) -> None:
        write_manifest(self.out_dir, self.command, self.written)


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = ExperimentConfig.load(args.config)
    return cfg.override(seed=args.seed, waive_coercivity=args.waive_coercivity,
                        tolerance=args.tolerance, out=args.out)


def _plan_rows(tree, plan, Y) -> list:
    x = plan.node_increments()
    A = plan.levels()
    rows = []
    for v in range(tree.n_nodes):
        rows.append({
            "node": v,
            "time_index": int(tree.time_index[v]),
            "time": tree.node_time(v),
            "L": " ".join(repr(float(c)) for c in tree.l_values[v]),
            "increment": " ".join(repr(float(c)) for c in x[v]),
            "level": " ".join(repr(float(c)) for c in A[v]),
            "adjoint": " ".join(repr(float(c)) for c in Y[v]),
        })
    return rows


def _solve(cfg: ExperimentConfig, tree, spec):
    opts = cfg.solve_options()
    if cfg.solver["mode"] == "capped":
        return solve_capped(tree, spec, cfg.solver["cap"], opts)
    return solve_uncapped(tree, spec, opts, waive_coercivity=cfg.solver["waive_coercivity"])


def _require_converged(report, what="solver") -> None:
    if not report.converged:
        raise _Exit(EXIT_NONCONVERGED,
                    f"{what} did not converge: kkt residual {report.kkt_residual:.3e} ({report.message})")


def cmd_solve(cfg: ExperimentConfig) -> int:
    tree, spec = cfg.build_tree(), cfg.build_spec()
    run = _Run(cfg.out_dir, "solve")
    plan, report = _solve(cfg, tree, spec)
    tol = cfg.stop["tolerance"]
    if cfg.solver["mode"] == "capped":
        kkt = capped_kkt_identities(tree, spec, plan, cfg.solver["cap"])
        cert = {"schema": "monotone-follower/capped-kkt/1", "n": cfg.solver["cap"],
                "lhs": kkt.lhs, "rhs": kkt.rhs, "identity_gap": kkt.identity_gap,
                "positive_at_cap": kkt.positive_at_cap, "negative_at_zero": kkt.negative_at_zero,
                "interior_abs": kkt.interior_abs, "max_discrepancy": kkt.max_discrepancy,
                "tolerance": tol, "certified": kkt.max_discrepancy <= tol}
        failing = "max_discrepancy"
    else:
        c = certify(tree, spec, plan, tol)
        cert = c.to_dict()
        failing = ", ".join(c.failing()) or "admissibility"
    Y = compute_adjoint(tree, spec, plan).values
    run.json("tree.json", tree.to_dict())
    run.json("plan.json", plan_to_dict(plan))
    run.json("solve_report.json", report.to_dict())
    run.json("certificate.json", cert)
    if cfg.wants("csv"):
        run.csv("plan.csv", PLAN_COLUMNS, _plan_rows(tree, plan, Y))
    run.close()
    print(f"value {report.value!r} iterations {report.iterations} kkt_residual {report.kkt_residual:.3e}")
    _require_converged(report)
    if not cert["certified"]:
        raise _Exit(EXIT_CHECK, f"certificate failed: {failing} above tolerance {tol:g}")
    print("certificate: PASS")
    return EXIT_OK


def cmd_ladder(cfg: ExperimentConfig, workers: int) -> int:
    tree, spec = cfg.build_tree(), cfg.build_spec()
    lad = cfg.ladder
    run = _Run(cfg.out_dir, "ladder")
    rep = run_ladder(tree, spec, lad["caps"], cfg.solve_options(),
                     waive_coercivity=cfg.solver["waive_coercivity"],
                     resolution=lad["resolution"], workers=workers)
    run.json("ladder.json", rep.to_dict())
    run.csv("ladder.csv", LADDER_COLUMNS, rep.rows())
    run.close()
    for r in rep.rows():
        print(f"n={r['n']:g} V_n={r['V_n']!r} gap={r['gap_to_V']:.3e} "
              f"pp={r['pp_distance']:.4g} sup={r['sup_distance']:.4g}")
    bad = [r.n for r in rep.rungs if not r.report.converged]
    if bad or not rep.uncapped_report.converged:
        which = ", ".join(f"n={n:g}" for n in bad) or "uncapped"
        raise _Exit(EXIT_NONCONVERGED, f"ladder rung(s) did not converge: {which}")
    if not rep.monotone:
        raise _Exit(EXIT_CHECK, "ladder values are not monotone within slack 1e-8")
    if rep.final_gap > lad["gap_target"]:
        raise _Exit(EXIT_CHECK, f"final gap {rep.final_gap:.3e} exceeds target {lad['gap_target']:g}")
    print("ladder: PASS")
    return EXIT_OK


def cmd_stop(cfg: ExperimentConfig) -> int:
    tree, spec = cfg.build_tree(), cfg.build_spec()
    run = _Run(cfg.out_dir, "stop")
    tol = cfg.stop["tolerance"]
    plan, report = solve_uncapped(tree, spec, cfg.solve_options(),
                                  waive_coercivity=cfg.solver["waive_coercivity"])
    _require_converged(report)
    cert = certify(tree, spec, plan, tol)
    run.json("plan.json", plan_to_dict(plan))
    run.json("certificate.json", cert.to_dict())
    if not cert.certified:
        run.close()
        raise _Exit(EXIT_CHECK, f"certificate failed: {', '.join(cert.failing())} above tolerance {tol:g}")
    eq = equivalence_check(tree, spec, plan, tol)
    doc = eq.to_dict()
    doc["payoff_form"] = "proof"
    run.json("stopping.json", doc)
    Z = payoff_process(tree, spec, cfg.stop["payoff"])
    snell = eq.snell if cfg.stop["payoff"] == "proof" else snell_min(tree, Z)
    run.csv("stop_region.csv", STOP_REGION_COLUMNS, stop_region_rows(tree, Z, snell))
    run.close()
    print(f"stopping value of tau_A {eq.control_stopping_value!r}, Snell value {eq.snell_value!r}, "
          f"bound {eq.proof_bound!r}")
    if not eq.passed:
        raise _Exit(EXIT_CHECK, f"stopping equivalence failed: snell gap {eq.snell_gap:.3e}, "
                                f"bound gap {eq.bound_gap:.3e}")
    print("equivalence: PASS")
    return EXIT_OK


def cmd_mzdist(cfg: ExperimentConfig, workers: int) -> int:
    """Pairwise pseudopath distances between ladder optimizers and the singular optimizer."""
    tree, spec = cfg.build_tree(), cfg.build_spec()
    lad = cfg.ladder
    run = _Run(cfg.out_dir, "mzdist")
    rep = run_ladder(tree, spec, lad["caps"], cfg.solve_options(),
                     waive_coercivity=cfg.solver["waive_coercivity"],
                     resolution=lad["resolution"], workers=workers)
    fine = TimeGrid.uniform(lad["resolution"], tree.grid.horizon)
    labels = [f"n={r.n:g}" for r in rep.rungs] + ["singular"]
    families = [control_paths(tree, r.plan, fine, rate=r.n) for r in rep.rungs]
    families.append(control_paths(tree, rep.uncapped_plan, fine))
    D = distance_matrix(families)
    limit = WeightedPaths.from_plan(tree, rep.uncapped_plan)
    all_times = list(range(tree.steps + 1))
    marg = [findim_marginal_distance(WeightedPaths.from_plan(tree, r.plan), limit, all_times)
            for r in rep.rungs] + [0.0]
    run.json("mzdist.json", {"schema": "monotone-follower/mzdist/1", "labels": labels,
                             "pseudopath": D.tolist(), "findim_marginal": marg,
                             "dictionary": DICTIONARY_VERSION, "resolution": lad["resolution"]})
    rows = [{"label": lab, **{labels[j]: float(D[i, j]) for j in range(len(labels))},
             "findim_marginal": marg[i]} for i, lab in enumerate(labels)]
    run.csv("mzdist.csv", ["label", *labels, "findim_marginal"], rows)
    run.close()
    for row in rows:
        print(f"{row['label']}: pp to singular {row['singular']:.4g}, marginal {row['findim_marginal']:.4g}")
    return EXIT_OK


def cmd_repro(name: str, out_dir: Path, workers: int) -> int:
    try:
        result = repro_mod.run(name, workers=workers)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None
    run = _Run(out_dir, f"repro {name}")
    run.json(f"repro-{name}.json", result.to_dict())
    if result.columns:
        run.csv(f"repro-{name}.csv", result.columns, result.rows)
    run.close()
    for line in result.lines:
        print(line)
    if not result.passed:
        raise _Exit(EXIT_CHECK, f"repro {name} failed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML experiment config")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides outputs.directory)")
    common.add_argument("--seed", type=int, metavar="N", help="seed for random trees and the solver")
    common.add_argument("--waive-coercivity", action="store_true",
                        help="run the uncapped solver without a coercivity proof (diagnostic mode)")
    common.add_argument("--tolerance", type=float, metavar="X", help="certificate tolerance")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="monofollow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one problem and certify it")
    sub.add_parser("ladder", parents=[common], help="capped ladder V^[n] with path distances")
    sub.add_parser("stop", parents=[common], help="stopping equivalence and stop region")
    r = sub.add_parser("repro", parents=[common], help="reproduce a worked example")
    r.add_argument("name", help=", ".join(sorted(repro_mod.SUITES)))
    sub.add_parser("mzdist", parents=[common], help="pseudopath distance matrix along a ladder")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        workers = threads()
        if args.command == "repro":
            out = Path(args.out) if args.out else Path("out")
            return cmd_repro(args.name, out, workers)
        cfg = _load(args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "ladder":
            return cmd_ladder(cfg, workers)
        if args.command == "stop":
            return cmd_stop(cfg)
        return cmd_mzdist(cfg, workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CoercivityUnverified as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _Exit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
