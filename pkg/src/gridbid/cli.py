"""gridbid command line: run, sweep, oracle, synth.

Exit codes: 0 success, 2 validation error, 3 solver failure,
4 benchmark-ordering violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .cases import ieee118_study, large_study, worked_example
from .grid import CaseError, load_case, load_scenarios, write_case, write_scenarios
from .harness import (
    ExperimentSpec,
    InvariantViolation,
    gamma_plotdata,
    oracle_search,
    penetration_plotdata,
    run_method,
    sweep_gamma,
    sweep_penetration,
)
from .lp import LpError, SolverFailure, get_backend
from .scenarios import ScenarioConfig

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_INVARIANT = 4


def _parse_gen(tokens):
    fields = {"seed": 0, "count": 20, "mean": 0.5, "std": 0.2}
    for token in tokens:
        for part in token.split(","):
            if not part:
                continue
            try:
                key, value = part.split("=", 1)
            except ValueError:
                raise CaseError(f"--gen expects key=value, got {part!r}") from None
            if key not in fields:
                raise CaseError(f"--gen got unknown key {key!r}")
            fields[key] = float(value) if key in ("mean", "std") else int(value)
    return ScenarioConfig(count=fields["count"], mean_fraction=fields["mean"],
                          std_fraction=fields["std"], seed=fields["seed"])


def _spec_from_args(args, method=None):
    spec = ExperimentSpec(
        case_path=args.case,
        scenario_path=getattr(args, "scenarios", None),
        scenario_config=_parse_gen(args.gen) if getattr(args, "gen", None) else None,
        out_dir=args.out,
        backend_name=os.environ.get("GRIDBID_BACKEND"),
        gamma=getattr(args, "gamma", 1.0),
        gap_tol=getattr(args, "gap_tol", 1e-6),
        node_limit=getattr(args, "node_limit", 100_000),
        time_limit=getattr(args, "time_limit", None),
    )
    if method is not None:
        spec.method = method
    if getattr(args, "methods", None):
        spec.methods = tuple(args.methods.split(","))
    return spec


def _add_io_args(p, scenario_required=True):
    p.add_argument("--case", required=True, help="case file (JSON)")
    p.add_argument("--scenarios", help="scenario file (JSON)")
    p.add_argument("--gen", nargs="+", metavar="KEY=VALUE",
                   help="generate scenarios: seed=.. count=.. [mean=..] [std=..]")
    p.add_argument("--out", default="gridbid-out", help="output directory")
    p.set_defaults(_scenario_required=scenario_required)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gridbid",
        description="Two-settlement market clearing with bilevel vres offers")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one dispatch method end to end")
    _add_io_args(p_run)
    p_run.add_argument("--method", required=True,
                       choices=["myd", "std", "bid-mccormick", "bid-kkt"])
    p_run.add_argument("--gamma", type=float, default=1.0)
    p_run.add_argument("--gap-tol", dest="gap_tol", type=float, default=1e-6)
    p_run.add_argument("--node-limit", dest="node_limit", type=int,
                       default=100_000)
    p_run.add_argument("--time-limit", dest="time_limit", type=float)

    p_sweep = sub.add_parser("sweep", help="parameter sweeps")
    sweep_sub = p_sweep.add_subparsers(dest="sweep_kind", required=True)

    p_g = sweep_sub.add_parser("gamma", help="sweep the envelope bound factor")
    _add_io_args(p_g)
    p_g.add_argument("--from", dest="gamma_from", type=float, default=0.2)
    p_g.add_argument("--to", dest="gamma_to", type=float, default=1.6)
    p_g.add_argument("--step", dest="gamma_step", type=float, default=0.2)
    p_g.add_argument("--methods", default="std,myd,bid-mccormick",
                     help="comma-separated method list")
    p_g.add_argument("--gap-tol", dest="gap_tol", type=float, default=1e-6)
    p_g.add_argument("--node-limit", dest="node_limit", type=int,
                     default=100_000)
    p_g.add_argument("--time-limit", dest="time_limit", type=float)

    p_p = sweep_sub.add_parser("penetration",
                               help="sweep vres and line capacity scales")
    _add_io_args(p_p)
    p_p.add_argument("--vres-scales", required=True,
                     help="comma-separated factors, e.g. 0.5,1,2")
    p_p.add_argument("--line-scales", required=True,
                     help="comma-separated factors, e.g. 1,2")
    p_p.add_argument("--methods", default="std,myd,bid-mccormick")
    p_p.add_argument("--gamma", type=float, default=1.0)

    p_o = sub.add_parser("oracle",
                         help="brute-force offer grid search (small fleets)")
    _add_io_args(p_o)
    p_o.add_argument("--grid-step", dest="grid_step", type=float, required=True)
    p_o.add_argument("--refine", type=int, default=2,
                     help="tenfold refinement passes around the best point")

    p_s = sub.add_parser("synth", help="write a shipped synthetic case")
    p_s.add_argument("--kind", required=True,
                     choices=["example", "118", "1814"])
    p_s.add_argument("--seed", type=int, default=None)
    p_s.add_argument("--scenario-count", type=int, default=None)
    p_s.add_argument("--out-case", required=True)
    p_s.add_argument("--out-scenarios")
    return parser


def _cmd_run(args):
    spec = _spec_from_args(args, method=args.method)
    summary = run_method(spec)
    print(json.dumps({"method": summary["method"], "cost": summary["cost"],
                      "wall_time": summary["wall_time"],
                      "scenario_count": summary["scenario_count"]}))
    return EXIT_OK


def _cmd_sweep_gamma(args):
    spec = _spec_from_args(args)
    n = int(round((args.gamma_to - args.gamma_from) / args.gamma_step)) + 1
    spec.gammas = tuple(round(args.gamma_from + i * args.gamma_step, 12)
                        for i in range(n))
    rows = sweep_gamma(spec)
    gamma_plotdata(rows, os.path.join(spec.out_dir, "plotdata_gamma.csv"))
    print(f"wrote {len(rows)} gamma rows to {spec.out_dir}")
    return EXIT_OK


def _cmd_sweep_penetration(args):
    spec = _spec_from_args(args)
    spec.vres_scales = tuple(float(s) for s in args.vres_scales.split(","))
    spec.line_scales = tuple(float(s) for s in args.line_scales.split(","))
    rows = sweep_penetration(spec)
    penetration_plotdata(
        rows, os.path.join(spec.out_dir, "plotdata_penetration.csv"))
    print(f"wrote {len(rows)} penetration cells to {spec.out_dir}")
    return EXIT_OK


def _cmd_oracle(args):
    spec = _spec_from_args(args)
    case, scenarios = spec.resolve_inputs()
    backend = spec.backend()
    result = oracle_search(case, scenarios, args.grid_step, backend,
                           refine_rounds=args.refine)
    os.makedirs(spec.out_dir, exist_ok=True)
    payload = {
        "best_offer": result.w.tolist(),
        "best_cost": result.cost,
        "grid_step": result.step,
        "evaluations": result.evaluations,
    }
    with open(os.path.join(spec.out_dir, "oracle.json"), "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    print(json.dumps(payload))
    return EXIT_OK


def _cmd_synth(args):
    if args.kind == "example":
        case, scen = worked_example()
    elif args.kind == "118":
        kwargs = {} if args.seed is None else {"seed": args.seed}
        if args.scenario_count is not None:
            kwargs["n_scenarios"] = args.scenario_count
        case, scen = ieee118_study(**kwargs)
    else:
        kwargs = {} if args.seed is None else {"seed": args.seed}
        if args.scenario_count is not None:
            kwargs["n_scenarios"] = args.scenario_count
        case, scen = large_study(**kwargs)
    write_case(case, args.out_case)
    if args.out_scenarios:
        write_scenarios(scen, args.out_scenarios)
    print(f"wrote {case.name}: {case.n_buses} buses, {case.n_lines} lines, "
          f"{case.n_units} units, {case.n_vres} vres")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            if args.sweep_kind == "gamma":
                return _cmd_sweep_gamma(args)
            return _cmd_sweep_penetration(args)
        if args.command == "oracle":
            return _cmd_oracle(args)
        return _cmd_synth(args)
    except (CaseError, LpError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
