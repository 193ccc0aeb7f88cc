"""``cachecran`` command line: gen, solve, oracle-check, sweep.

Exit codes: 0 ok, 2 infeasible, 3 dual solve not converged, 4 invalid
input, 5 oracle refused (instance too large).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from typing import Optional, Sequence

from .config import ConfigError, build_config, read_document
from .harness import SolverSettings, Solved, emit_results, run_sweep, solve_scenario
from .model import check_feasibility
from .oracle import GuardExceeded, Infeasible, TinyInstanceGuard, brute_force_optimum
from .scenario import config_to_dict, dumps_scenario, generate_scenario, load_scenario

EXIT_OK, EXIT_INFEASIBLE, EXIT_UNCONVERGED, EXIT_INVALID, EXIT_GUARD = 0, 2, 3, 4, 5
REPORT_FORMAT = "cachecran-report"

log = logging.getLogger("cachecran")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write(path: Optional[str], data: bytes) -> None:
    if path is None or path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        with open(path, "wb") as fh:
            fh.write(data)


def _dumps(doc) -> bytes:
    return (json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n").encode()


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


def solver_report(sc, out: Solved, settings: SolverSettings) -> dict:
    """Structured record of one dual solve and its primal recovery."""
    res, rec = out.dual, out.recovery
    doc = {
        "format": REPORT_FORMAT,
        "version": 1,
        "scenario": {"seed": sc.seed, "strategy": sc.strategy, "system": config_to_dict(sc.config)},
        "solver": {"mode": settings.mode, "tol": settings.tol, "radius": settings.radius,
                   "max_iter": settings.max_iter},
        "dual": {
            "converged": res.converged,
            "iterations": res.iterations,
            "bound": res.g,
            "bound_uncertainty": _finite(res.bound_gap),
            "lambda": res.dual.lam.tolist(),
            "lambda_pairs": res.dual.pairs.tolist(),
            "mu": res.dual.mu.tolist(),
            "trajectory": [None if g is None else float(g) for g in res.trajectory],
        },
        "feasible": rec.feasible,
        "reason": rec.reason,
        "gap": _finite(out.gap),
        "allocation": None,
        "feasibility": None,
    }
    if rec.feasible:
        a = rec.allocation
        rep = check_feasibility(a, sc.content, sc.channel, sc.config)
        doc["allocation"] = {"assignment": a.assignment.tolist(), "selection": a.selection.tolist(),
                             "power": a.power.tolist(), "share": a.share.tolist()}
        doc["feasibility"] = {"user_rates": rep.user_rates.tolist(),
                              "fronthaul_loads": rep.fronthaul_loads.tolist(),
                              "total_power": rep.total_power,
                              "violations": [list(map(str, v)) for v in rep.violations]}
    return doc


def _summary_lines(doc: dict) -> str:
    d = doc["dual"]
    lines = [f"dual bound      {d['bound']:.6g} W ({'converged' if d['converged'] else 'NOT converged'}, "
             f"{d['iterations']} iterations)"]
    if doc["feasible"]:
        f = doc["feasibility"]
        lines.append(f"total power     {f['total_power']:.6g} W")
        lines.append(f"gap             {doc['gap']:.3%}")
        lines.append("user rates      " + " ".join(f"{r / 1e6:.3f}" for r in f["user_rates"]) + " Mbps")
        lines.append("fronthaul loads " + " ".join(f"{r / 1e6:.3f}" for r in f["fronthaul_loads"]) + " Mbps")
    else:
        lines.append(f"infeasible      {doc['reason']}")
    return "\n".join(lines)


# -- commands ------------------------------------------------------------------

def _config(args):
    doc = read_document(args.config) if args.config else {}
    if args.preset:
        doc["preset"] = args.preset
    return build_config(doc, args.set or ())


def cmd_gen(args) -> int:
    cfg = _config(args)
    seed = cfg.seed if args.seed is None else args.seed
    strategy = args.strategy or cfg.strategy
    sc = generate_scenario(cfg.system, seed, strategy, cfg.zipf_exponent, cfg.geometry, cfg.channel)
    _write(args.output, dumps_scenario(sc).encode())
    s = cfg.system
    print(f"scenario M={s.num_rrhs} K={s.num_users} N={s.num_subchannels} F={s.num_contents} "
          f"S={s.cache_size} cache={strategy} seed={seed}", file=sys.stderr)
    return EXIT_OK


def _load_scenario(path):
    try:
        return load_scenario(path)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc.strerror}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid scenario file {path}: {exc}") from None


def _scenario_for(args, cfg):
    if args.scenario:
        return _load_scenario(args.scenario)
    seed = cfg.seed if args.seed is None else args.seed
    return generate_scenario(cfg.system, seed, cfg.strategy, cfg.zipf_exponent, cfg.geometry, cfg.channel)


def cmd_solve(args) -> int:
    cfg = _config(args)
    sc = _scenario_for(args, cfg)
    settings = cfg.solver if args.mode is None else SolverSettings(args.mode, cfg.solver.tol, cfg.solver.radius,
                                                                   cfg.solver.max_iter)
    out = solve_scenario(sc, settings)
    doc = solver_report(sc, out, settings)
    _write(args.output, _dumps(doc))
    print(_summary_lines(doc), file=sys.stderr)
    if not out.dual.converged:
        return EXIT_UNCONVERGED
    return EXIT_OK if out.recovery.feasible else EXIT_INFEASIBLE


def cmd_oracle_check(args) -> int:
    cfg = _config(args)
    sc = _scenario_for(args, cfg)
    guard = TinyInstanceGuard(args.limit)
    try:
        guard.check(sc.config)
    except GuardExceeded as exc:
        print(f"refusing oracle run: {exc}", file=sys.stderr)
        return EXIT_GUARD
    out = solve_scenario(sc, cfg.solver)
    doc = solver_report(sc, out, cfg.solver)
    try:
        orc = brute_force_optimum(sc.channel, sc.content, sc.config, guard)
        oracle = orc.total_power
        rep = check_feasibility(orc.allocation, sc.content, sc.channel, sc.config)
        doc["oracle"] = {"total_power": oracle, "skeletons": orc.skeletons, "solved": orc.solved,
                         "feasible": rep.feasible, "allocation": {
                             "assignment": orc.allocation.assignment.tolist(),
                             "selection": orc.allocation.selection.tolist(),
                             "power": orc.allocation.power.tolist()}}
    except Infeasible as exc:
        oracle = math.inf
        doc["oracle"] = {"total_power": None, "feasible": False, "reason": str(exc)}
    primal = out.recovery.power
    doc["comparison"] = {
        "primal": _finite(primal), "dual": out.dual.g, "oracle": _finite(oracle),
        "primal_vs_oracle": _finite((primal - oracle) / oracle) if math.isfinite(oracle) and oracle > 0 else None,
        "oracle_vs_dual": _finite((oracle - out.dual.g) / oracle) if math.isfinite(oracle) and oracle > 0 else None,
        "weak_duality": bool(out.dual.g <= oracle * (1 + 1e-6)),
    }
    _write(args.output, _dumps(doc))
    c = doc["comparison"]
    print(f"primal {c['primal']} W, dual {c['dual']:.6g} W, oracle {c['oracle']} W", file=sys.stderr)
    if c["primal_vs_oracle"] is not None:
        print(f"primal over oracle {c['primal_vs_oracle']:.3%}, oracle over dual {c['oracle_vs_dual']:.3%}",
              file=sys.stderr)
    if not math.isfinite(oracle):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    spec = cfg.sweep
    res = run_sweep(spec, threads=args.threads)
    if args.csv:
        _write(args.csv, emit_results(res, "csv"))
    if args.json:
        _write(args.json, emit_results(res, "structured"))
    if not args.csv and not args.json:
        _write("-", emit_results(res, "csv"))
    ok = sum(r.feasible for r in res.records)
    total = len(res.records)
    unconv = sum(not r.converged for r in res.records)
    print(f"{ok}/{total} drops feasible, {unconv} unconverged", file=sys.stderr)
    for r in res.records:
        if not r.feasible:
            log.info("drop %d %s %g infeasible: %s", r.drop, r.strategy, r.value, r.reason)
    return EXIT_OK if ok >= 0.9 * total else EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config entry, e.g. fronthaul_capacity='40 Mbps' (repeatable)")
    common.add_argument("--preset", choices=("full", "desk"), help="base parameter set (default full)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="cachecran", description="Power minimisation in cache-enabled cloud RAN.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a scenario file")
    g.add_argument("--seed", type=int)
    g.add_argument("--strategy", choices=("most_popular", "probabilistic", "none"))
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", parents=[common], help="dual solve plus primal recovery")
    s.add_argument("scenario", nargs="?", help="scenario file (default: generate from config)")
    s.add_argument("--seed", type=int)
    s.add_argument("--mode", choices=("exhaustive", "greedy"))
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_solve)

    o = sub.add_parser("oracle-check", parents=[common], help="compare against brute force on a tiny instance")
    o.add_argument("scenario", nargs="?")
    o.add_argument("--seed", type=int)
    o.add_argument("--limit", type=int, default=TinyInstanceGuard().limit, help="maximum skeleton count")
    o.add_argument("-o", "--output", default="-")
    o.set_defaults(func=cmd_oracle_check)

    w = sub.add_parser("sweep", parents=[common], help="Monte-Carlo sweep over fronthaul capacity or cache size")
    w.add_argument("--csv", help="summary CSV path")
    w.add_argument("--json", help="structured results path")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(message)s")
    if args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
