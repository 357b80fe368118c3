"""Experiment runner: single-method runs, study sweeps, and plot data.

Every entry point writes machine-readable results under an output
directory with a manifest.  Timing always lives in separate fields so
cost outputs are reproducible byte for byte under a fixed seed.
"""

from __future__ import annotations

import csv
import itertools
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .bilevel import (
    myd_offer,
    solve_bid_kkt,
    solve_bid_mccormick,
    solve_std,
)
from .grid import (
    CaseError,
    OfferVector,
    load_case,
    load_scenarios,
    penetration_level,
    scale_case,
    scale_scenarios,
    validate_scenarios,
)
from .lp import get_backend
from .market import settle_sequential, write_settlement_csv, write_settlement_json
from .scenarios import ScenarioConfig, generate_scenarios

METHODS = ("myd", "std", "bid-mccormick", "bid-kkt")
ORDER_TOL = 1e-6  # relative, on 1 + |S_StD|


class InvariantViolation(Exception):
    """A run produced costs that break the benchmark ordering."""


@dataclass
class ExperimentSpec:
    case_path: str | None = None
    case: object = None
    scenario_path: str | None = None
    scenario_config: ScenarioConfig | None = None
    scenarios: object = None
    method: str = "bid-mccormick"
    methods: tuple = ("std", "myd", "bid-mccormick")
    gamma: float = 1.0
    gammas: tuple = ()
    vres_scales: tuple = ()
    line_scales: tuple = ()
    out_dir: str | None = None
    backend_name: str | None = None
    gap_tol: float = 1e-6
    node_limit: int = 100_000
    time_limit: float | None = None
    extras: dict = field(default_factory=dict)

    def resolve_inputs(self):
        if self.case is None:
            if self.case_path is None:
                raise CaseError("no case given (case_path or case)")
            case = load_case(self.case_path)
        else:
            case = self.case
        if self.scenarios is not None:
            scenarios = self.scenarios
        elif self.scenario_path is not None:
            scenarios = load_scenarios(self.scenario_path)
        elif self.scenario_config is not None:
            scenarios = generate_scenarios(case, self.scenario_config)
        else:
            raise CaseError("no scenarios given (path, config, or object)")
        validate_scenarios(case, scenarios)
        return case, scenarios

    def backend(self):
        return get_backend(self.backend_name)

    def to_dict(self):
        return {
            "case_path": self.case_path,
            "case": getattr(self.case, "name", None),
            "scenario_path": self.scenario_path,
            "scenario_config": None if self.scenario_config is None else {
                "count": self.scenario_config.count,
                "mean_fraction": self.scenario_config.mean_fraction,
                "std_fraction": self.scenario_config.std_fraction,
                "seed": self.scenario_config.seed,
            },
            "method": self.method,
            "methods": list(self.methods),
            "gamma": self.gamma,
            "gammas": list(self.gammas),
            "vres_scales": list(self.vres_scales),
            "line_scales": list(self.line_scales),
            "gap_tol": self.gap_tol,
            "node_limit": self.node_limit,
            "time_limit": self.time_limit,
        }


def _jsonable(value):
    if isinstance(value, float) and not np.isfinite(value):
        return repr(value)
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, OfferVector):
        return value.w.tolist()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def run_single(case, scenarios, method, backend, gamma=1.0, gap_tol=1e-6,
               node_limit=100_000, time_limit=None):
    """One method end to end; returns (summary, settlement, bilevel_result)."""
    if method not in METHODS:
        raise CaseError(f"unknown method {method!r}; choose from {METHODS}")
    t_build = time.perf_counter()
    result = None
    report = None
    if method == "myd":
        offer = myd_offer(scenarios)
        t_solve = time.perf_counter()
        report = settle_sequential(case, offer, scenarios, backend)
        cost = report.total_cost
        offer_total = float(offer.w.sum())
        da_vres = float(report.da.p_vres.sum())
    elif method == "std":
        t_solve = time.perf_counter()
        std = solve_std(case, scenarios, backend)
        cost = std.objective
        offer_total = float(case.vres_capacity().sum())
        da_vres = float(std.p_vres.sum())
    elif method == "bid-mccormick":
        t_solve = time.perf_counter()
        result = solve_bid_mccormick(case, scenarios, gamma, backend)
        report = result.evaluated
        cost = report.total_cost
        offer_total = float(result.offer.w.sum())
        da_vres = float(report.da.p_vres.sum())
    else:  # bid-kkt
        t_solve = time.perf_counter()
        result = solve_bid_kkt(case, scenarios, backend, gap_tol=gap_tol,
                               node_limit=node_limit, time_limit=time_limit)
        if result.offer is None:
            raise InvariantViolation("branch-and-bound found no incumbent")
        report = result.evaluated
        cost = report.total_cost
        offer_total = float(result.offer.w.sum())
        da_vres = float(report.da.p_vres.sum())
    t_end = time.perf_counter()
    summary = {
        "method": method,
        "cost": cost,
        "da_vres_quantity": da_vres,
        "offer_total": offer_total,
        "scenario_count": scenarios.n_scenarios,
        "gamma": gamma if method in ("bid-mccormick",) else None,
        "build_time": t_solve - t_build,
        "solve_time": t_end - t_solve,
        "wall_time": t_end - t_build,
    }
    if result is not None:
        summary["status"] = result.status
        if result.relaxed_objective is not None:
            summary["relaxed_objective"] = result.relaxed_objective
        if result.exact_objective is not None:
            summary["exact_objective"] = result.exact_objective
            summary["gap"] = result.diagnostics.get("gap")
            summary["nodes"] = result.diagnostics.get("nodes")
    return summary, report, result


_TIMING_KEYS = ("build_time", "solve_time", "wall_time")


def _strip_timing(summary):
    return {k: v for k, v in summary.items() if k not in _TIMING_KEYS}


def run_method(spec):
    """Run spec.method and write results under spec.out_dir."""
    case, scenarios = spec.resolve_inputs()
    backend = spec.backend()
    summary, report, result = run_single(
        case, scenarios, spec.method, backend, gamma=spec.gamma,
        gap_tol=spec.gap_tol, node_limit=spec.node_limit,
        time_limit=spec.time_limit)
    outputs = {}
    if spec.out_dir is not None:
        import os

        os.makedirs(spec.out_dir, exist_ok=True)

        def path(name):
            outputs[name] = os.path.join(spec.out_dir, name)
            return outputs[name]

        if report is not None:
            write_settlement_json(report, path("settlement.json"))
            write_settlement_csv(report, path("settlement.csv"))
        if result is not None:
            with open(path("bilevel.json"), "w") as f:
                json.dump(_jsonable({
                    "offer": result.offer,
                    "status": result.status,
                    "exact_objective": result.exact_objective,
                    "relaxed_objective": result.relaxed_objective,
                    "z": result.z,
                    "evaluated_cost": None if result.evaluated is None
                    else result.evaluated.total_cost,
                    "diagnostics": {
                        k: v for k, v in result.diagnostics.items()
                        if k not in ("certificates", "solve_time", "build_time")
                    },
                }), f, indent=1, sort_keys=True)
                f.write("\n")
        with open(path("results.json"), "w") as f:
            json.dump(_jsonable(_strip_timing(summary)), f, indent=1,
                      sort_keys=True)
            f.write("\n")
        with open(path("summary.json"), "w") as f:
            json.dump(_jsonable(summary), f, indent=1, sort_keys=True)
            f.write("\n")
        _write_manifest(spec, outputs)
    return summary


def check_ordering(costs):
    """Re-check S_MyD >= S_BiD >= S_StD on a row of evaluated costs."""
    std = costs.get("std")
    if std is None:
        return
    tol = ORDER_TOL * (1.0 + abs(std))
    for name in ("myd", "bid-mccormick", "bid-kkt"):
        c = costs.get(name)
        if c is not None and c < std - tol:
            raise InvariantViolation(
                f"{name} evaluated cost {c} undercuts the stochastic "
                f"benchmark {std} beyond tolerance")
    myd = costs.get("myd")
    kkt = costs.get("bid-kkt")
    if myd is not None and kkt is not None and myd < kkt - tol:
        raise InvariantViolation(
            f"bid-kkt evaluated cost {kkt} exceeds the myopic cost {myd} "
            "beyond tolerance")


def sweep_gamma(spec):
    """One row per gamma; constant rows reuse the gamma-independent runs."""
    case, scenarios = spec.resolve_inputs()
    backend = spec.backend()
    gammas = list(spec.gammas) or [spec.gamma]
    if any(g <= 0 for g in gammas):
        raise CaseError("gamma values must be positive")
    methods = list(spec.methods)
    static = {}
    for method in methods:
        if method in ("myd", "std"):
            static[method], _, _ = run_single(case, scenarios, method, backend)
    rows = []
    for gamma in gammas:
        row = {"gamma": gamma}
        costs = {}
        for method in methods:
            if method in static:
                summary = static[method]
            else:
                summary, _, _ = run_single(
                    case, scenarios, method, backend, gamma=gamma,
                    gap_tol=spec.gap_tol, node_limit=spec.node_limit,
                    time_limit=spec.time_limit)
            row[f"cost[{method}]"] = summary["cost"]
            row[f"da_vres[{method}]"] = summary["da_vres_quantity"]
            costs[method] = summary["cost"]
        check_ordering(costs)
        rows.append(row)
    if spec.out_dir is not None:
        _write_table(spec, rows, "sweep_gamma.csv")
    return rows


def sweep_penetration(spec):
    """Grid over (vres_scale, line_scale); labels follow the muR-nuL style."""
    case, scenarios = spec.resolve_inputs()
    backend = spec.backend()
    vres_scales = list(spec.vres_scales) or [1.0]
    line_scales = list(spec.line_scales) or [1.0]
    if any(s <= 0 for s in vres_scales + line_scales):
        raise CaseError("scale factors must be positive")
    rows = []
    for vs, ls in itertools.product(vres_scales, line_scales):
        scaled_case = scale_case(case, vs, ls)
        scaled_scen = scale_scenarios(scenarios, vs)
        mu = penetration_level(scaled_case, scaled_scen)
        row = {
            "vres_scale": vs,
            "line_scale": ls,
            "penetration": mu,
            "label": f"{mu:.2f}R-{ls:g}L",
        }
        costs = {}
        for method in spec.methods:
            summary, _, _ = run_single(
                scaled_case, scaled_scen, method, backend, gamma=spec.gamma,
                gap_tol=spec.gap_tol, node_limit=spec.node_limit,
                time_limit=spec.time_limit)
            row[f"cost[{method}]"] = summary["cost"]
            costs[method] = summary["cost"]
        check_ordering(costs)
        rows.append(row)
    if spec.out_dir is not None:
        _write_table(spec, rows, "sweep_penetration.csv")
    return rows


def emit_plotdata(rows, x_key, series_keys, path=None):
    """Long-format {x, series, value} records, ready for external plotting."""
    records = []
    for row in rows:
        for key in series_keys:
            if key in row:
                records.append({"x": row[x_key], "series": key,
                                "value": row[key]})
    if path is not None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["x", "series", "value"])
            for rec in records:
                writer.writerow([rec["x"], rec["series"], repr(rec["value"])])
    return records


def gamma_plotdata(rows, path=None):
    keys = sorted({k for row in rows for k in row if k.startswith("cost[")})
    return emit_plotdata(rows, "gamma", keys, path)


def penetration_plotdata(rows, path=None):
    """One series per (method, line_scale) against penetration."""
    records = []
    for row in rows:
        for key in sorted(row):
            if key.startswith("cost["):
                method = key[5:-1]
                records.append({
                    "x": row["penetration"],
                    "series": f"{method}@{row['line_scale']:g}L",
                    "value": row[key],
                })
    if path is not None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["x", "series", "value"])
            for rec in records:
                writer.writerow([rec["x"], rec["series"], repr(rec["value"])])
    return records


def _write_table(spec, rows, name):
    import os

    os.makedirs(spec.out_dir, exist_ok=True)
    path = os.path.join(spec.out_dir, name)
    keys = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(keys)
        for row in rows:
            writer.writerow([
                repr(row[k]) if isinstance(row.get(k), float) else row.get(k, "")
                for k in keys
            ])
    _write_manifest(spec, {name: path})
    return path


def _write_manifest(spec, outputs):
    import os

    path = os.path.join(spec.out_dir, "manifest.json")
    existing = {}
    if os.path.exists(path):
        with open(path) as f:
            existing = json.load(f)
    listed = existing.get("outputs", [])
    for name in outputs:
        if name not in listed:
            listed.append(name)
    payload = {
        "schema_version": 1,
        "spec": _jsonable(spec.to_dict()),
        "outputs": listed,
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")


@dataclass
class OracleResult:
    w: np.ndarray
    cost: float
    evaluations: int
    step: float


def oracle_search(case, scenarios, step, backend, refine_rounds=2,
                  max_evals=250_000):
    """Brute-force grid search over offer vectors by sequential evaluation.

    Exhaustive per-unit grids (step spacing, capacity endpoint included),
    then optional refinement passes shrink the step tenfold around the best
    point.  Independent of every solver path above the market clearing
    itself; intended for small vres fleets.
    """
    if step <= 0:
        raise CaseError("grid step must be positive")
    validate_scenarios(case, scenarios)
    cap = case.vres_capacity()

    def axis(lo, hi, s):
        n = int(np.floor((hi - lo) / s + 1e-9)) + 1
        pts = lo + s * np.arange(n)
        if pts[-1] < hi - 1e-12:
            pts = np.append(pts, hi)
        return pts

    evaluations = 0

    def search(axes):
        nonlocal evaluations
        total = int(np.prod([len(a) for a in axes]))
        if total > max_evals:
            raise CaseError(
                f"oracle grid has {total} points (> {max_evals}); "
                "increase the step or reduce the vres fleet")
        best_w, best_cost = None, np.inf
        for w in itertools.product(*axes):
            cost = settle_sequential(case, OfferVector(np.array(w)),
                                     scenarios, backend).total_cost
            evaluations += 1
            if cost < best_cost - 1e-12:
                best_cost, best_w = cost, np.array(w)
        return best_w, best_cost

    axes = [axis(0.0, cap[k], step) for k in range(case.n_vres)]
    best_w, best_cost = search(axes)
    s = step
    for _ in range(refine_rounds):
        span, s = s, s / 10.0
        axes = [axis(max(0.0, best_w[k] - span), min(cap[k], best_w[k] + span), s)
                for k in range(case.n_vres)]
        w, cost = search(axes)
        if cost < best_cost:
            best_w, best_cost = w, cost
    return OracleResult(best_w, best_cost, evaluations, step)
