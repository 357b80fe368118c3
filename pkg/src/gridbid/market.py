"""Day-ahead and real-time market clearing plus the sequential settlement.

The day-ahead LP schedules conventional and vres energy against inelastic
demand over a DC network; the real-time LP covers each scenario's deviation
from that schedule with redispatch, curtailment, and load shedding.  Costs
are signed: downward redispatch is paid back at C_down, so per-scenario
real-time cost can be negative.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .grid import OfferVector, validate_scenarios
from .lp import EQ, GE, INF, LE, LpModel, LpStatus, SolverFailure


class MarketError(SolverFailure):
    """Clearing failed (infeasible case or backend breakdown)."""


@dataclass
class DaOutcome:
    """Day-ahead schedule with the full dual certificate."""

    p_conv: np.ndarray
    p_vres: np.ndarray
    theta_da: np.ndarray
    lam_balance: np.ndarray
    lam_line_lo: np.ndarray
    lam_line_hi: np.ndarray
    lam_conv_lo: np.ndarray
    lam_conv_hi: np.ndarray
    lam_vres_lo: np.ndarray
    lam_vres_hi: np.ndarray
    cost_da: float
    offer: np.ndarray
    balance_residual: float


@dataclass
class RtOutcome:
    r_up: np.ndarray
    r_down: np.ndarray
    curtail: np.ndarray
    shed: np.ndarray
    theta_rt: np.ndarray
    cost_rt: float
    balance_residual: float


@dataclass
class SettlementReport:
    da: DaOutcome
    rt: list
    weights: np.ndarray
    expected_rt_cost: float
    total_cost: float


def _susceptances(case):
    return np.array([1.0 / ln.reactance_pu for ln in case.lines], dtype=float)


def _bus_members(case):
    """Per-bus index lists for units, vres, and incident lines."""
    units = [[] for _ in range(case.n_buses)]
    vres = [[] for _ in range(case.n_buses)]
    out_lines = [[] for _ in range(case.n_buses)]
    in_lines = [[] for _ in range(case.n_buses)]
    for i, u in enumerate(case.conventional_units):
        units[u.bus].append(i)
    for k, v in enumerate(case.vres_units):
        vres[v.bus].append(k)
    for l, ln in enumerate(case.lines):
        out_lines[ln.from_bus].append(l)
        in_lines[ln.to_bus].append(l)
    return units, vres, out_lines, in_lines


def add_flow_rows(m, case, theta, prefix):
    """Line-limit rows |(theta_a - theta_b)/x| <= F per line."""
    b = _susceptances(case)
    for l, ln in enumerate(case.lines):
        coeffs = ((theta[ln.from_bus], b[l]), (theta[ln.to_bus], -b[l]))
        m.add_row(f"{prefix}_line_lo[{l}]", coeffs, GE, -ln.capacity_mw)
        m.add_row(f"{prefix}_line_hi[{l}]", coeffs, LE, ln.capacity_mw)


def _balance_flow_coeffs(case, theta):
    """Per-bus list of (theta_var, coef) for -sum(outgoing)+sum(incoming) flows."""
    b = _susceptances(case)
    terms = [[] for _ in range(case.n_buses)]
    for l, ln in enumerate(case.lines):
        a, c = ln.from_bus, ln.to_bus
        terms[a] += [(theta[a], -b[l]), (theta[c], b[l])]
        terms[c] += [(theta[a], b[l]), (theta[c], -b[l])]
    return terms


def line_flows(case, theta_values):
    b = _susceptances(case)
    th = np.asarray(theta_values, dtype=float)
    return np.array([
        b[l] * (th[ln.from_bus] - th[ln.to_bus])
        for l, ln in enumerate(case.lines)
    ])


def flow_divergence(case, theta_values):
    """Per-bus net outflow sum(outgoing) - sum(incoming)."""
    f = line_flows(case, theta_values)
    div = np.zeros(case.n_buses)
    for l, ln in enumerate(case.lines):
        div[ln.from_bus] += f[l]
        div[ln.to_bus] -= f[l]
    return div


def build_da_lp(case, offer):
    """Day-ahead clearing LP under the given vres quantity offer.

    Schedule limits are variable bounds; network limits and per-bus energy
    balance are rows.  The reference angle is pinned by an explicit row so
    its multiplier is part of the certificate.
    """
    offer = offer if isinstance(offer, OfferVector) else OfferVector(offer)
    if offer.n_vres != case.n_vres:
        raise MarketError(
            f"offer has {offer.n_vres} entries for {case.n_vres} vres units")
    w = np.minimum(offer.w, case.vres_capacity())
    m = LpModel("da")
    pc = [m.add_var(f"P_C[{i}]", u.p_min, u.p_max, u.cost_da)
          for i, u in enumerate(case.conventional_units)]
    pw = [m.add_var(f"P_W[{k}]", 0.0, w[k]) for k in range(case.n_vres)]
    th = [m.add_var(f"theta[{n}]", -INF, INF) for n in range(case.n_buses)]
    m.meta.update(pc=pc, pw=pw, th=th)

    units, vres, _, _ = _bus_members(case)
    flow_terms = _balance_flow_coeffs(case, th)
    demand = case.demand_vector()
    for n in range(case.n_buses):
        coeffs = ([(pc[i], 1.0) for i in units[n]]
                  + [(pw[k], 1.0) for k in vres[n]]
                  + flow_terms[n])
        m.add_row(f"da_balance[{n}]", coeffs, EQ, demand[n])
    add_flow_rows(m, case, th, "da")
    m.add_row("da_ref_angle", [(th[case.reference_bus], 1.0)], EQ, 0.0)
    return m.freeze()


def clear_da(case, offer, backend):
    """Solve the day-ahead LP and extract schedule plus duals."""
    offer = offer if isinstance(offer, OfferVector) else OfferVector(offer)
    model = build_da_lp(case, offer)
    sol = backend.solve(model)
    if sol.status is not LpStatus.OPTIMAL:
        raise MarketError(f"day-ahead clearing ended with status "
                          f"{sol.status.value}", status=sol.status)
    pc, pw, th = model.meta["pc"], model.meta["pw"], model.meta["th"]
    p_conv = sol.x[pc] if pc else np.zeros(0)
    p_vres = sol.x[pw] if pw else np.zeros(0)
    theta = sol.x[th]
    lam_b = np.array([sol.dual(f"da_balance[{n}]") for n in range(case.n_buses)])
    lam_lo = np.array([sol.dual(f"da_line_lo[{l}]") for l in range(case.n_lines)])
    lam_hi = np.array([-sol.dual(f"da_line_hi[{l}]") for l in range(case.n_lines)])
    inj = np.zeros(case.n_buses)
    for i, u in enumerate(case.conventional_units):
        inj[u.bus] += p_conv[i]
    for k, v in enumerate(case.vres_units):
        inj[v.bus] += p_vres[k]
    resid = float(np.max(np.abs(inj - case.demand_vector()
                                - flow_divergence(case, theta)))) \
        if case.n_buses else 0.0
    return DaOutcome(
        p_conv=p_conv,
        p_vres=p_vres,
        theta_da=theta,
        lam_balance=lam_b,
        lam_line_lo=lam_lo,
        lam_line_hi=lam_hi,
        lam_conv_lo=sol.lam_lo[pc] if pc else np.zeros(0),
        lam_conv_hi=sol.lam_hi[pc] if pc else np.zeros(0),
        lam_vres_lo=sol.lam_lo[pw] if pw else np.zeros(0),
        lam_vres_hi=sol.lam_hi[pw] if pw else np.zeros(0),
        cost_da=float(sol.objective),
        offer=np.array(offer.w, dtype=float),
        balance_residual=resid,
    )


def build_rt_lp(case, da, wtilde):
    """Real-time redispatch LP for one realization, given the DA outcome.

    The rebalance row keeps the day-ahead angles inside the flow term, as
    (theta_rt - theta_da) differences; day-ahead quantities enter the rhs.
    """
    wtilde = np.asarray(wtilde, dtype=float).reshape(-1)
    if wtilde.shape[0] != case.n_vres:
        raise MarketError(f"realization has {wtilde.shape[0]} entries "
                          f"for {case.n_vres} vres units")
    m = LpModel("rt")
    r_up, r_dn = [], []
    for i, u in enumerate(case.conventional_units):
        # clamp tiny negative headroom left by solver tolerance
        up = max(u.p_max - da.p_conv[i], 0.0)
        dn = max(da.p_conv[i] - u.p_min, 0.0)
        r_up.append(m.add_var(f"r_up[{i}]", 0.0, up, u.cost_up))
        r_dn.append(m.add_var(f"r_dn[{i}]", 0.0, dn, -u.cost_down))
    cr = [m.add_var(f"curtail[{k}]", 0.0, wtilde[k]) for k in range(case.n_vres)]
    demand = case.demand_vector()
    sh = [m.add_var(f"shed[{n}]", 0.0, demand[n], case.voll)
          for n in range(case.n_buses)]
    th = [m.add_var(f"theta_rt[{n}]", -INF, INF) for n in range(case.n_buses)]
    m.meta.update(r_up=r_up, r_dn=r_dn, cr=cr, sh=sh, th=th)

    units, vres, _, _ = _bus_members(case)
    flow_terms = _balance_flow_coeffs(case, th)
    div_da = flow_divergence(case, da.theta_da)
    for n in range(case.n_buses):
        coeffs = ([(r_up[i], 1.0) for i in units[n]]
                  + [(r_dn[i], -1.0) for i in units[n]]
                  + [(cr[k], -1.0) for k in vres[n]]
                  + [(sh[n], 1.0)]
                  + flow_terms[n])
        rhs = div_da[n] + sum(da.p_vres[k] - wtilde[k] for k in vres[n])
        m.add_row(f"rt_balance[{n}]", coeffs, EQ, rhs)
    add_flow_rows(m, case, th, "rt")
    m.add_row("rt_ref_angle", [(th[case.reference_bus], 1.0)], EQ, 0.0)
    return m.freeze()


def clear_rt(case, da, scenarios, backend):
    """Clear every scenario independently; returns outcomes and E[cost]."""
    validate_scenarios(case, scenarios)
    outcomes = []
    for w_idx in range(scenarios.n_scenarios):
        wtilde = scenarios.realizations[w_idx]
        model = build_rt_lp(case, da, wtilde)
        sol = backend.solve(model)
        if sol.status is not LpStatus.OPTIMAL:
            raise MarketError(
                f"real-time clearing failed in scenario {w_idx}: "
                f"{sol.status.value}", status=sol.status)
        meta = model.meta
        theta = sol.x[meta["th"]]
        inj = np.zeros(case.n_buses)
        for i, u in enumerate(case.conventional_units):
            inj[u.bus] += sol.x[meta["r_up"][i]] - sol.x[meta["r_dn"][i]]
        for k, v in enumerate(case.vres_units):
            inj[v.bus] += wtilde[k] - da.p_vres[k] - sol.x[meta["cr"][k]]
        inj += sol.x[meta["sh"]]
        resid = float(np.max(np.abs(
            inj - flow_divergence(case, theta) + flow_divergence(case, da.theta_da))))
        outcomes.append(RtOutcome(
            r_up=sol.x[meta["r_up"]] if meta["r_up"] else np.zeros(0),
            r_down=sol.x[meta["r_dn"]] if meta["r_dn"] else np.zeros(0),
            curtail=sol.x[meta["cr"]] if meta["cr"] else np.zeros(0),
            shed=sol.x[meta["sh"]],
            theta_rt=theta,
            cost_rt=float(sol.objective),
            balance_residual=resid,
        ))
    expected = float(np.dot(scenarios.weights,
                            [o.cost_rt for o in outcomes]))
    return outcomes, expected


def settle_sequential(case, offer, scenarios, backend):
    """Clear day-ahead first, then every real-time scenario given it."""
    da = clear_da(case, offer, backend)
    rt, expected = clear_rt(case, da, scenarios, backend)
    return SettlementReport(
        da=da,
        rt=rt,
        weights=np.array(scenarios.weights, dtype=float),
        expected_rt_cost=expected,
        total_cost=da.cost_da + expected,
    )


# -- report export ----------------------------------------------------------

def settlement_to_dict(report):
    return {
        "cost_da": report.da.cost_da,
        "expected_rt_cost": report.expected_rt_cost,
        "total_cost": report.total_cost,
        "offer": report.da.offer.tolist(),
        "p_conv": report.da.p_conv.tolist(),
        "p_vres": report.da.p_vres.tolist(),
        "lam_balance": report.da.lam_balance.tolist(),
        "scenarios": [
            {
                "omega": w,
                "weight": float(report.weights[w]),
                "cost_rt": o.cost_rt,
                "shed_total": float(o.shed.sum()),
                "curtail_total": float(o.curtail.sum()),
            }
            for w, o in enumerate(report.rt)
        ],
    }


def write_settlement_json(report, path):
    with open(path, "w") as f:
        json.dump(settlement_to_dict(report), f, indent=1)
        f.write("\n")


def write_settlement_csv(report, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["omega", "weight", "cost_rt", "shed_total",
                         "curtail_total"])
        for w, o in enumerate(report.rt):
            writer.writerow([w, repr(float(report.weights[w])),
                             repr(o.cost_rt),
                             repr(float(o.shed.sum())),
                             repr(float(o.curtail.sum()))])
