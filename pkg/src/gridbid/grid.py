"""Power-system case data model, case/scenario file I/O, and case utilities.

Case files are JSON with ``schema_version: 1`` and top-level keys ``buses``,
``lines``, ``conventional_units``, ``vres_units``, ``loads``, ``voll``,
``reference_bus``.  Units are MW, $/MWh, and per-unit reactance.  Scenario
files carry ``weights`` and a scenario-major ``realizations`` matrix.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

CASE_SCHEMA_VERSION = 1
SCENARIO_SCHEMA_VERSION = 1


class CaseError(Exception):
    """Malformed or inconsistent case/scenario data."""


@dataclass(frozen=True)
class Bus:
    id: int
    name: str = ""


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    reactance_pu: float
    capacity_mw: float


@dataclass(frozen=True)
class ConventionalUnit:
    bus: int
    cost_da: float       # C_i, day-ahead energy offer
    cost_up: float       # upward redispatch price
    cost_down: float     # downward redispatch price
    p_max: float
    p_min: float = 0.0


@dataclass(frozen=True)
class VresUnit:
    bus: int
    capacity_mw: float


@dataclass(frozen=True)
class LoadPoint:
    bus: int
    demand_mw: float


@dataclass(frozen=True)
class GridCase:
    """Immutable single-hour dispatch case.

    Bus ids must be 0..n-1 after ingestion; :func:`load_case` normalizes
    arbitrary ids.  Safe to share across workers.
    """

    buses: tuple
    lines: tuple
    conventional_units: tuple
    vres_units: tuple
    loads: tuple
    voll: float
    reference_bus: int = 0
    name: str = "case"

    def __post_init__(self):
        validate_case(self)

    @property
    def n_buses(self):
        return len(self.buses)

    @property
    def n_lines(self):
        return len(self.lines)

    @property
    def n_units(self):
        return len(self.conventional_units)

    @property
    def n_vres(self):
        return len(self.vres_units)

    def demand_vector(self):
        """Per-bus demand L_n with co-located loads summed."""
        d = np.zeros(self.n_buses)
        for ld in self.loads:
            d[ld.bus] += ld.demand_mw
        return d

    def total_demand(self):
        return float(sum(ld.demand_mw for ld in self.loads))

    def vres_capacity(self):
        return np.array([v.capacity_mw for v in self.vres_units], dtype=float)


@dataclass(frozen=True)
class ScenarioSet:
    """Discrete renewable-production scenarios with probability weights.

    ``realizations`` is (n_scenarios, n_vres); weights sum to one.
    """

    realizations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.realizations, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "realizations", r)
        object.__setattr__(self, "weights", w)
        if r.ndim != 2:
            raise CaseError("realizations must be a 2-D scenario-by-unit matrix")
        if w.ndim != 1 or w.shape[0] != r.shape[0]:
            raise CaseError("weights must be one per scenario")
        if np.any(w < 0):
            raise CaseError("scenario weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise CaseError(f"scenario weights sum to {w.sum()!r}, expected 1")
        if np.any(r < 0):
            raise CaseError("scenario realizations must be nonnegative")
        r.setflags(write=False)
        w.setflags(write=False)

    @property
    def n_scenarios(self):
        return self.realizations.shape[0]

    @property
    def n_vres(self):
        return self.realizations.shape[1]

    def mean(self):
        """Probability-weighted mean production per vres unit."""
        return self.weights @ self.realizations


@dataclass(frozen=True)
class OfferVector:
    """Day-ahead quantity offer W_k per vres unit."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).reshape(-1)
        object.__setattr__(self, "w", w)
        if np.any(w < 0):
            raise CaseError("offers must be nonnegative")
        w.setflags(write=False)

    @property
    def n_vres(self):
        return self.w.shape[0]


def validate_case(case):
    n = len(case.buses)
    if n == 0:
        raise CaseError("case has no buses")
    ids = [b.id for b in case.buses]
    if sorted(ids) != list(range(n)):
        raise CaseError("bus ids must be unique and contiguous 0..n-1 "
                        "(use load_case to normalize raw ids)")
    if not 0 <= case.reference_bus < n:
        raise CaseError(f"reference bus {case.reference_bus} not in case")
    for ln in case.lines:
        if not (0 <= ln.from_bus < n and 0 <= ln.to_bus < n):
            raise CaseError(f"line {ln} references a missing bus")
        if ln.from_bus == ln.to_bus:
            raise CaseError(f"line {ln} connects a bus to itself")
        if not ln.reactance_pu > 0:
            raise CaseError(f"line {ln} must have positive reactance")
        if ln.capacity_mw < 0:
            raise CaseError(f"line {ln} has negative capacity")
    for u in case.conventional_units:
        if not 0 <= u.bus < n:
            raise CaseError(f"unit {u} references a missing bus")
        if not 0 <= u.p_min <= u.p_max:
            raise CaseError(f"unit {u} needs 0 <= p_min <= p_max")
        if u.cost_up < u.cost_da or u.cost_da < u.cost_down:
            warnings.warn(
                f"unit at bus {u.bus}: redispatch prices do not bracket the "
                f"day-ahead offer (C_up={u.cost_up}, C={u.cost_da}, "
                f"C_down={u.cost_down}); costs stay bounded but check inputs",
                stacklevel=2,
            )
    for v in case.vres_units:
        if not 0 <= v.bus < n:
            raise CaseError(f"vres unit {v} references a missing bus")
        if v.capacity_mw < 0:
            raise CaseError(f"vres unit {v} has negative capacity")
    for ld in case.loads:
        if not 0 <= ld.bus < n:
            raise CaseError(f"load {ld} references a missing bus")
        if ld.demand_mw < 0:
            raise CaseError(f"load {ld} has negative demand")
    if not case.voll > 0:
        raise CaseError("voll must be positive")
    _check_connected(case)


def _check_connected(case):
    # One reference bus is designated per case, so every bus must be able
    # to reach it; a split network would need per-island references.
    n = len(case.buses)
    adj = [[] for _ in range(n)]
    for ln in case.lines:
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    seen = [False] * n
    stack = [case.reference_bus]
    seen[case.reference_bus] = True
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    if not all(seen):
        orphans = [i for i, s in enumerate(seen) if not s]
        raise CaseError(
            f"buses {orphans} are disconnected from the reference bus; "
            "split networks need a reference per island and are not supported"
        )


def validate_scenarios(case, scenarios):
    """Cross-check a scenario set against a case's vres fleet."""
    if scenarios.n_vres != case.n_vres:
        raise CaseError(
            f"scenario set has {scenarios.n_vres} vres columns, "
            f"case has {case.n_vres} vres units"
        )
    cap = case.vres_capacity()
    if np.any(scenarios.realizations > cap[None, :] + 1e-9):
        raise CaseError("scenario realizations exceed vres capacity")


# -- file I/O ---------------------------------------------------------------

def case_to_dict(case):
    return {
        "schema_version": CASE_SCHEMA_VERSION,
        "name": case.name,
        "voll": case.voll,
        "reference_bus": case.reference_bus,
        "buses": [{"id": b.id, "name": b.name} for b in case.buses],
        "lines": [
            {"from_bus": ln.from_bus, "to_bus": ln.to_bus,
             "reactance_pu": ln.reactance_pu, "capacity_mw": ln.capacity_mw}
            for ln in case.lines
        ],
        "conventional_units": [
            {"bus": u.bus, "cost_da": u.cost_da, "cost_up": u.cost_up,
             "cost_down": u.cost_down, "p_max": u.p_max, "p_min": u.p_min}
            for u in case.conventional_units
        ],
        "vres_units": [
            {"bus": v.bus, "capacity_mw": v.capacity_mw}
            for v in case.vres_units
        ],
        "loads": [{"bus": ld.bus, "demand_mw": ld.demand_mw} for ld in case.loads],
    }


def write_case(case, path):
    with open(path, "w") as f:
        json.dump(case_to_dict(case), f, indent=1, sort_keys=True)
        f.write("\n")


def case_from_dict(data):
    try:
        version = data.get("schema_version")
        if version != CASE_SCHEMA_VERSION:
            raise CaseError(f"unsupported case schema_version {version!r}")
        raw_ids = [int(b["id"]) for b in data["buses"]]
        if len(set(raw_ids)) != len(raw_ids):
            raise CaseError("duplicate bus ids")
        remap = {orig: new for new, orig in enumerate(sorted(raw_ids))}

        def bus_ref(orig, what):
            try:
                return remap[int(orig)]
            except KeyError:
                raise CaseError(f"{what} references unknown bus {orig}") from None

        buses = tuple(
            Bus(remap[int(b["id"])], str(b.get("name", f"bus{b['id']}")))
            for b in sorted(data["buses"], key=lambda b: int(b["id"]))
        )
        lines = tuple(
            Line(bus_ref(ln["from_bus"], "line"), bus_ref(ln["to_bus"], "line"),
                 float(ln["reactance_pu"]), float(ln["capacity_mw"]))
            for ln in data.get("lines", [])
        )
        units = tuple(
            ConventionalUnit(bus_ref(u["bus"], "conventional unit"),
                             float(u["cost_da"]), float(u["cost_up"]),
                             float(u["cost_down"]), float(u["p_max"]),
                             float(u.get("p_min", 0.0)))
            for u in data.get("conventional_units", [])
        )
        vres = tuple(
            VresUnit(bus_ref(v["bus"], "vres unit"), float(v["capacity_mw"]))
            for v in data.get("vres_units", [])
        )
        loads = tuple(
            LoadPoint(bus_ref(ld["bus"], "load"), float(ld["demand_mw"]))
            for ld in data.get("loads", [])
        )
        ref = data.get("reference_bus")
        ref = min(remap.values()) if ref is None else bus_ref(ref, "reference_bus")
        return GridCase(buses, lines, units, vres, loads,
                        float(data["voll"]), ref,
                        name=str(data.get("name", "case")))
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseError(f"malformed case data: {exc}") from exc


def load_case(path):
    """Read, normalize (contiguous bus indices), and validate a case file."""
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise CaseError(f"cannot parse case file {path}: {exc}") from exc
    return case_from_dict(data)


def write_scenarios(scenarios, path):
    payload = {
        "schema_version": SCENARIO_SCHEMA_VERSION,
        "weights": scenarios.weights.tolist(),
        "realizations": scenarios.realizations.tolist(),
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)
        f.write("\n")


def load_scenarios(path):
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise CaseError(f"cannot parse scenario file {path}: {exc}") from exc
    version = data.get("schema_version")
    if version != SCENARIO_SCHEMA_VERSION:
        raise CaseError(f"unsupported scenario schema_version {version!r}")
    try:
        return ScenarioSet(np.asarray(data["realizations"], dtype=float),
                           np.asarray(data["weights"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseError(f"malformed scenario data: {exc}") from exc


def case_from_matpower(tables, voll, cost_up_factor=1.5, cost_down_factor=0.5,
                       vres=(), name="matpower"):
    """Convert MATPOWER-style case tables (bus/gen/branch/gencost arrays).

    Legacy tables carry neither renewable units nor redispatch prices, so
    vres units come in as explicit (bus_id, capacity_mw) pairs and the
    redispatch prices as factors on the linear energy cost.
    """
    bus = np.atleast_2d(np.asarray(tables["bus"], dtype=float))
    gen = np.atleast_2d(np.asarray(tables["gen"], dtype=float))
    branch = np.atleast_2d(np.asarray(tables["branch"], dtype=float))
    gencost = np.atleast_2d(np.asarray(tables["gencost"], dtype=float))
    if gencost.shape[0] != gen.shape[0]:
        raise CaseError("gencost must have one row per generator")

    raw_ids = bus[:, 0].astype(int)
    data = {
        "schema_version": CASE_SCHEMA_VERSION,
        "name": name,
        "voll": voll,
        "buses": [{"id": int(i), "name": f"bus{int(i)}"} for i in raw_ids],
        "lines": [
            {"from_bus": int(row[0]), "to_bus": int(row[1]),
             "reactance_pu": float(row[3]), "capacity_mw": float(row[5])}
            for row in branch
        ],
        "conventional_units": [],
        "vres_units": [{"bus": int(b), "capacity_mw": float(c)} for b, c in vres],
        "loads": [
            {"bus": int(row[0]), "demand_mw": float(row[2])}
            for row in bus if row[2] > 0
        ],
        "reference_bus": None,
    }
    # MATPOWER bus type 3 marks the reference bus.
    ref_rows = np.where(bus[:, 1] == 3)[0]
    if ref_rows.size:
        data["reference_bus"] = int(bus[ref_rows[0], 0])
    for g, c in zip(gen, gencost):
        if c[0] != 2:
            raise CaseError("only polynomial (model 2) gencost rows are supported")
        ncoef = int(c[3])
        coeffs = c[4:4 + ncoef]
        # linear term of the polynomial; quadratic terms are not representable
        if ncoef >= 3 and coeffs[0] != 0:
            raise CaseError("quadratic generator costs are not supported")
        marginal = float(coeffs[-2]) if ncoef >= 2 else 0.0
        data["conventional_units"].append({
            "bus": int(g[0]),
            "cost_da": marginal,
            "cost_up": marginal * cost_up_factor,
            "cost_down": marginal * cost_down_factor,
            "p_max": float(g[8]),
            "p_min": float(max(g[9], 0.0)),
        })
    return case_from_dict(data)


# -- case utilities ---------------------------------------------------------

def scale_case(case, vres_scale, line_scale):
    """Scale vres capacities and line capacities; everything else unchanged."""
    if not (vres_scale > 0 and line_scale > 0):
        raise CaseError("scale factors must be positive")
    return replace(
        case,
        lines=tuple(replace(ln, capacity_mw=ln.capacity_mw * line_scale)
                    for ln in case.lines),
        vres_units=tuple(replace(v, capacity_mw=v.capacity_mw * vres_scale)
                         for v in case.vres_units),
    )


def scale_scenarios(scenarios, vres_scale):
    """Scale realizations along with the capacities they were drawn under."""
    return ScenarioSet(scenarios.realizations * vres_scale, scenarios.weights)


def penetration_level(case, scenarios):
    """Expected total vres production divided by total demand."""
    total = case.total_demand()
    if total <= 0:
        raise CaseError("penetration level undefined for zero total demand")
    if case.n_vres == 0:
        return 0.0
    validate_scenarios(case, scenarios)
    return float(scenarios.mean().sum() / total)
