"""Shipped test systems and seeded synthetic case generators.

Real wind siting and cost data for the reference systems are not public,
so the large cases here are synthetic networks of comparable dimensions
(118-bus-class and roughly 1800-bus-class), clearly labeled as such.
Line capacities are calibrated against probe dispatches so the base cases
are lightly congested rather than pathological.
"""

from __future__ import annotations

import numpy as np

from .grid import (
    Bus,
    ConventionalUnit,
    GridCase,
    Line,
    LoadPoint,
    OfferVector,
    ScenarioSet,
    VresUnit,
    penetration_level,
    scale_case,
    scale_scenarios,
)
from .lp import HighsBackend
from .market import clear_da, line_flows
from .scenarios import ScenarioConfig, generate_scenarios


def worked_example():
    """Single-bus instance with a hand-solvable piecewise cost curve.

    One unit (C=10, C_up=20, C_down=5, 0..200 MW), one 100 MW vres unit,
    100 MW load, realizations {40, 80} equiprobable.  Offering 40 costs 500
    in expectation; the myopic mean offer of 60 costs 550.
    """
    case = GridCase(
        buses=(Bus(0, "hub"),),
        lines=(),
        conventional_units=(ConventionalUnit(0, 10.0, 20.0, 5.0, 200.0, 0.0),),
        vres_units=(VresUnit(0, 100.0),),
        loads=(LoadPoint(0, 100.0),),
        voll=1000.0,
        reference_bus=0,
        name="worked-example",
    )
    scenarios = ScenarioSet(np.array([[40.0], [80.0]]), np.array([0.5, 0.5]))
    return case, scenarios


def two_bus_congested():
    """Cheap generation behind a 10 MW tie, load on the far side."""
    case = GridCase(
        buses=(Bus(0, "gen"), Bus(1, "load")),
        lines=(Line(0, 1, 0.1, 10.0),),
        conventional_units=(
            ConventionalUnit(0, 5.0, 10.0, 2.0, 200.0, 0.0),
            ConventionalUnit(1, 50.0, 75.0, 25.0, 200.0, 0.0),
        ),
        vres_units=(),
        loads=(LoadPoint(1, 100.0),),
        voll=1000.0,
        name="two-bus-congested",
    )
    return case


def _random_tree_lines(rng, n_bus, extra_fraction=0.4):
    """Random spanning tree plus extra chords; reactances in [0.05, 0.2]."""
    edges = []
    seen = set()
    for child in range(1, n_bus):
        parent = int(rng.integers(0, child))
        edges.append((parent, child))
        seen.add((parent, child))
    n_extra = int(rng.integers(0, max(1, int(extra_fraction * n_bus)) + 1))
    for _ in range(n_extra):
        a, b = rng.integers(0, n_bus, size=2)
        a, b = int(min(a, b)), int(max(a, b))
        if a == b or (a, b) in seen:
            continue
        seen.add((a, b))
        edges.append((a, b))
    x = rng.uniform(0.05, 0.2, size=len(edges))
    return edges, x


def _split_total(rng, total, n, spread=0.6):
    """Split a total into n positive shares with bounded dispersion."""
    shares = rng.uniform(1.0 - spread, 1.0 + spread, size=n)
    return total * shares / shares.sum()


def random_instance(seed, max_buses=10, max_scenarios=20):
    """Randomized dispatch instance plus truncated-normal scenarios.

    Cost structure keeps C_up > C > C_down > 0 and p_min = 0, the regime
    where shedding and curtailment give complete real-time recourse and
    cost-optimal offers sit below the forecast mean.
    """
    rng = np.random.default_rng(seed)
    n_bus = int(rng.integers(1, max_buses + 1))
    edges, x = _random_tree_lines(rng, n_bus)

    load_buses = [n for n in range(n_bus) if rng.random() < 0.75]
    if not load_buses:
        load_buses = [0]
    demands = rng.uniform(20.0, 100.0, size=len(load_buses))
    total_load = float(demands.sum())

    n_units = int(rng.integers(1, max(2, n_bus // 2) + 1))
    caps = _split_total(rng, total_load * rng.uniform(1.5, 2.2), n_units)
    units = []
    for i in range(n_units):
        c = float(rng.uniform(8.0, 40.0))
        units.append(ConventionalUnit(
            bus=int(rng.integers(0, n_bus)),
            cost_da=c,
            cost_up=c * float(rng.uniform(1.4, 2.2)),
            cost_down=c * float(rng.uniform(0.2, 0.8)),
            p_max=float(caps[i]),
            p_min=0.0,
        ))

    n_vres = int(rng.integers(1, min(3, n_bus) + 1))
    vcaps = _split_total(rng, total_load * rng.uniform(0.3, 0.9), n_vres)
    vres = [VresUnit(int(rng.integers(0, n_bus)), float(vcaps[k]))
            for k in range(n_vres)]

    line_cap = rng.uniform(0.5, 1.2, size=len(edges)) * total_load
    case = GridCase(
        buses=tuple(Bus(n, f"b{n}") for n in range(n_bus)),
        lines=tuple(Line(a, b, float(xx), float(c))
                    for (a, b), xx, c in zip(edges, x, line_cap)),
        conventional_units=tuple(units),
        vres_units=tuple(vres),
        loads=tuple(LoadPoint(b, float(d)) for b, d in zip(load_buses, demands)),
        voll=float(rng.uniform(500.0, 2000.0)),
        name=f"random-{seed}",
    )
    n_scen = int(rng.integers(2, max_scenarios + 1))
    config = ScenarioConfig(
        count=n_scen,
        mean_fraction=float(rng.uniform(0.4, 0.7)),
        std_fraction=float(rng.uniform(0.1, 0.25)),
        seed=int(rng.integers(0, 2**62)),
    )
    return case, generate_scenarios(case, config)


def small_bilevel_instance(seed):
    """3-bus, 2-unit, 1-vres instance sized for grid-search verification."""
    rng = np.random.default_rng(seed)
    n_bus = 3
    edges, x = _random_tree_lines(rng, n_bus, extra_fraction=0.5)
    demands = rng.uniform(20.0, 60.0, size=n_bus)
    total_load = float(demands.sum())
    caps = _split_total(rng, total_load * rng.uniform(1.5, 2.0), 2)
    units = []
    for i in range(2):
        c = float(rng.uniform(8.0, 40.0))
        units.append(ConventionalUnit(
            bus=int(rng.integers(0, n_bus)),
            cost_da=c,
            cost_up=c * float(rng.uniform(1.4, 2.2)),
            cost_down=c * float(rng.uniform(0.2, 0.8)),
            p_max=float(caps[i]),
            p_min=0.0,
        ))
    wcap = float(min(rng.uniform(0.3, 0.6) * total_load, 50.0))
    line_cap = rng.uniform(0.6, 1.2, size=len(edges)) * total_load
    case = GridCase(
        buses=tuple(Bus(n, f"b{n}") for n in range(n_bus)),
        lines=tuple(Line(a, b, float(xx), float(c))
                    for (a, b), xx, c in zip(edges, x, line_cap)),
        conventional_units=tuple(units),
        vres_units=(VresUnit(int(rng.integers(0, n_bus)), wcap),),
        loads=tuple(LoadPoint(n, float(d)) for n, d in enumerate(demands)),
        voll=float(rng.uniform(500.0, 1500.0)),
        name=f"small-bilevel-{seed}",
    )
    config = ScenarioConfig(
        count=int(rng.integers(2, 6)),
        mean_fraction=float(rng.uniform(0.4, 0.7)),
        std_fraction=float(rng.uniform(0.1, 0.25)),
        seed=int(rng.integers(0, 2**62)),
    )
    return case, generate_scenarios(case, config)


def _calibrate_line_caps(case, offers, floor_fraction=0.03, margin=1.3):
    """Size line capacities from probe dispatches under huge provisional caps."""
    backend = HighsBackend()
    peak = np.zeros(case.n_lines)
    for w in offers:
        da = clear_da(case, OfferVector(w), backend)
        peak = np.maximum(peak, np.abs(line_flows(case, da.theta_da)))
    floor = floor_fraction * case.total_demand()
    return margin * peak + floor


def _synthetic_system(rng, n_bus, n_lines, n_units, n_loads, n_vres,
                      total_load, vres_total, cost_up_factor, cost_down_factor,
                      name):
    edges = []
    seen = set()
    for child in range(1, n_bus):
        parent = int(rng.integers(max(0, child - 12), child))
        edges.append((parent, child))
        seen.add((parent, child))
    while len(edges) < n_lines:
        a, b = rng.integers(0, n_bus, size=2)
        a, b = int(min(a, b)), int(max(a, b))
        if a == b or (a, b) in seen:
            continue
        seen.add((a, b))
        edges.append((a, b))
    x = rng.uniform(0.02, 0.15, size=len(edges))

    load_buses = rng.choice(n_bus, size=n_loads, replace=False)
    demands = _split_total(rng, total_load, n_loads, spread=0.8)

    unit_buses = rng.choice(n_bus, size=n_units, replace=False)
    caps = _split_total(rng, total_load * 1.6, n_units, spread=0.8)
    base_cost = rng.uniform(10.0, 45.0, size=n_units)
    units = tuple(
        ConventionalUnit(
            bus=int(unit_buses[i]),
            cost_da=float(base_cost[i]),
            cost_up=float(base_cost[i] * cost_up_factor),
            cost_down=float(base_cost[i] * cost_down_factor),
            p_max=float(caps[i]),
            p_min=0.0,
        )
        for i in range(n_units)
    )
    vres_buses = rng.choice(n_bus, size=n_vres, replace=False)
    vcaps = _split_total(rng, vres_total, n_vres, spread=0.5)
    vres = tuple(VresUnit(int(vres_buses[k]), float(vcaps[k]))
                 for k in range(n_vres))

    # provisional huge capacities; calibrated by the caller
    big = 10.0 * total_load
    return GridCase(
        buses=tuple(Bus(n, f"b{n}") for n in range(n_bus)),
        lines=tuple(Line(a, b, float(xx), big) for (a, b), xx in zip(edges, x)),
        conventional_units=units,
        vres_units=vres,
        loads=tuple(LoadPoint(int(b), float(d))
                    for b, d in zip(load_buses, demands)),
        voll=1000.0,
        name=name,
    )


def _with_line_caps(case, caps):
    lines = tuple(
        Line(ln.from_bus, ln.to_bus, ln.reactance_pu, float(c))
        for ln, c in zip(case.lines, caps)
    )
    return GridCase(case.buses, lines, case.conventional_units,
                    case.vres_units, case.loads, case.voll,
                    case.reference_bus, case.name)


def ieee118_like(seed=2018):
    """118-bus-class synthetic system: 186 lines, 54 units, 14 wind farms.

    Base wind is sized around 10% penetration at a 0.5 mean fraction; line
    capacities are calibrated so the 70%-penetration study (vres scaled up,
    lines doubled) is moderately congested.  Redispatch prices bracket the
    energy offer tightly from below (C_down ~ 0.97 C) and widely from above
    (C_up ~ 2.8 C), so over-offering is the expensive mistake.
    """
    rng = np.random.default_rng(seed)
    total_load = 4200.0
    case = _synthetic_system(
        rng, n_bus=118, n_lines=186, n_units=54, n_loads=99, n_vres=14,
        total_load=total_load, vres_total=0.2 * total_load,
        cost_up_factor=2.8, cost_down_factor=0.97,
        name=f"ieee118-class-{seed}",
    )
    # calibrate at study-level wind (the sweep scales wind ~7x, lines 2x)
    study = scale_case(case, 7.0, 1.0)
    mean = 0.5 * study.vres_capacity()
    caps_study = _calibrate_line_caps(
        study, [np.zeros(14), mean, study.vres_capacity()])
    return _with_line_caps(case, caps_study / 2.0)


def ieee118_study(seed=2018, n_scenarios=20, sigma=0.15, penetration=0.7,
                  line_scale=2.0):
    """High-renewables study setup on the 118-bus-class system."""
    base = ieee118_like(seed)
    scen = generate_scenarios(
        base, ScenarioConfig(n_scenarios, 0.5, sigma, seed))
    s = penetration / penetration_level(base, scen)
    return scale_case(base, s, line_scale), scale_scenarios(scen, s)


def large_synthetic(seed=1814):
    """1800-bus-class synthetic system for scalability runs.

    2264 lines, 345 conventional units, 1564 loads, 14 wind farms; the
    dimensions mirror a large ISO footprint but the data is synthetic.
    """
    rng = np.random.default_rng(seed)
    total_load = 20000.0
    case = _synthetic_system(
        rng, n_bus=1814, n_lines=2264, n_units=345, n_loads=1564, n_vres=14,
        total_load=total_load, vres_total=0.088 * total_load,
        cost_up_factor=2.5, cost_down_factor=0.9,
        name=f"large-synthetic-{seed}",
    )
    study = scale_case(case, 16.0, 1.0)
    mean = 0.5 * study.vres_capacity()
    caps_study = _calibrate_line_caps(
        study, [np.zeros(14), mean, study.vres_capacity()])
    return _with_line_caps(case, caps_study / 5.0)


def large_study(seed=1814, n_scenarios=10, sigma=0.15, penetration=0.7,
                line_scale=5.0):
    """High-renewables scalability setup on the 1800-bus-class system."""
    base = large_synthetic(seed)
    scen = generate_scenarios(
        base, ScenarioConfig(n_scenarios, 0.5, sigma, seed))
    s = penetration / penetration_level(base, scen)
    return scale_case(base, s, line_scale), scale_scenarios(scen, s)
