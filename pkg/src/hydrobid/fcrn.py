"""FCR-N capacity market clearing for a fixed day-ahead outcome.

Cleared per period with one system-wide balance (the product has no nodal
index).  Day-ahead dispatch enters as a parameter: strategic reserve is
capped by the unit's own DA dispatch per segment, non-strategic reserve by
both remaining headroom and the DA dispatch itself.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .da import ClearingResult, KktReport, NsUnit, dual_objective_named, generic_kkt_residuals, nonstrategic_units, strategic_plants
from .lp import OPTIMAL, LinearProgram, solve_lp
from .model import BidCurve, MarketInstance, Scenario

__all__ = [
    "FcrnLp",
    "fcrn_requirement",
    "build_fcrn_lp",
    "clear_fcrn",
    "fcrn_kkt_residuals",
]


def fcrn_requirement(p_max: float, freq_dev: float, droop: float) -> float:
    """Reserve obligation of a unit: twice capacity times frequency deviation
    over the governor droop."""
    if droop <= 0:
        raise ValueError("droop must be positive")
    return 2.0 * p_max * freq_dev / droop


# Column families: ("pfc", (p, s, t)) strategic, ("gfc", (u, t)) non-strategic.
# Row families: ("fbal", (t,)) equality with dual lambda_fc;
#   ("th9", (p, s, t)) pfc <= DA dispatch;      ("th6", (u, t)) gfc >= requirement;
#   ("th7", (u, t)) gfc (+ g_da) <= p_max;      ("th10", (u, t)) gfc <= g_da.
# In LP mode the DA terms are constants; the reformulator keeps them as columns.


def fcrn_columns(instance: MarketInstance, scenario: Scenario):
    nt = instance.horizon
    for p, plant in strategic_plants(instance):
        for s in range(instance.num_segments):
            for t in range(nt):
                yield ("pfc", (p, s, t), 0.0, ("vol", p, s, t), ("bid", p, s, t))
    for u, unit in enumerate(nonstrategic_units(instance)):
        for t in range(nt):
            yield ("gfc", (u, t), 0.0, np.inf, float(scenario.cost_fc[unit.unit_index, t]))


def fcrn_rows(instance: MarketInstance, scenario: Scenario, da_vals=None):
    """Yield (family, key, coefs, lo, hi); DA references are ("pda"/"g", key)
    column references unless ``da_vals`` pins them to numbers."""
    nt = instance.horizon
    ns = nonstrategic_units(instance)
    sts = strategic_plants(instance)
    st_local = {p: k for k, (p, _) in enumerate(sts)}
    for t in range(nt):
        coefs = {}
        for p, plant in sts:
            for s in range(instance.num_segments):
                coefs[("pfc", (p, s, t))] = 1.0
        for u in range(len(ns)):
            coefs[("gfc", (u, t))] = 1.0
        d = float(scenario.demand_fc[t])
        yield ("fbal", (t,), coefs, d, d)
    for p, plant in sts:
        for s in range(instance.num_segments):
            for t in range(nt):
                if da_vals is None:
                    coefs = {("pfc", (p, s, t)): 1.0, ("pda", (p, s, t)): -1.0}
                    yield ("th9", (p, s, t), coefs, -np.inf, 0.0)
                else:
                    cap = float(da_vals["p_da"][st_local[p], s, t])
                    yield ("th9", (p, s, t), {("pfc", (p, s, t)): 1.0}, -np.inf, cap)
    for u, unit in enumerate(ns):
        for t in range(nt):
            req = fcrn_requirement(unit.p_max, float(scenario.freq_dev[t]), unit.droop)
            yield ("th6", (u, t), {("gfc", (u, t)): 1.0}, req, np.inf)
            if da_vals is None:
                yield ("th7", (u, t), {("gfc", (u, t)): 1.0, ("g", (u, t)): 1.0}, -np.inf, unit.p_max)
                yield ("th10", (u, t), {("gfc", (u, t)): 1.0, ("g", (u, t)): -1.0}, -np.inf, 0.0)
            else:
                gda = float(da_vals["g_da"][u, t])
                yield ("th7", (u, t), {("gfc", (u, t)): 1.0}, -np.inf, unit.p_max - gda)
                yield ("th10", (u, t), {("gfc", (u, t)): 1.0}, -np.inf, gda)


@dataclass
class FcrnLp:
    lp: LinearProgram
    col: dict[tuple, int]
    row: dict[tuple, int]
    instance: MarketInstance
    scenario: Scenario
    bid_prices: dict[int, np.ndarray]
    bid_volumes: dict[int, np.ndarray]


def _resolve_fc_bids(instance: MarketInstance, bids: dict[str, BidCurve]):
    nb, nt = instance.num_segments, instance.horizon
    prices, volumes = {}, {}
    for p, plant in strategic_plants(instance):
        curve = bids.get(plant.name)
        if curve is None:
            raise ValueError(f"missing FCR-N bid curve for strategic unit {plant.name!r}")
        if curve.prices.shape != (nb, nt):
            raise ValueError(f"bid curve for {plant.name!r} has wrong shape")
        if not curve.is_monotone():
            raise ValueError(f"bid curve for {plant.name!r} is not monotone")
        bb = instance.bid_bounds[plant.name]
        if (curve.prices < bb.fc_min - 1e-9).any() or (curve.prices > bb.fc_max + 1e-9).any():
            raise ValueError(f"FCR-N bid prices for {plant.name!r} violate bid bounds")
        prices[p] = curve.prices
        volumes[p] = curve.volumes
    return prices, volumes


def build_fcrn_lp(
    instance: MarketInstance,
    fc_bids: dict[str, BidCurve],
    da_result: ClearingResult,
    scenario: Scenario,
) -> FcrnLp:
    """Assemble the reserve-procurement LP given a cleared DA result."""
    for fieldname in ("p_da", "g_da"):
        if fieldname not in da_result.dispatch:
            raise ValueError(f"day-ahead result lacks {fieldname!r} dispatch")
    prices, volumes = _resolve_fc_bids(instance, fc_bids)
    da_vals = {"p_da": da_result.dispatch["p_da"], "g_da": da_result.dispatch["g_da"]}
    cols = list(fcrn_columns(instance, scenario))
    colix = {}
    c = np.zeros(len(cols))
    cl = np.zeros(len(cols))
    cu = np.zeros(len(cols))
    names = []
    for j, (family, key, lo, hi, cost) in enumerate(cols):
        colix[(family, key)] = j
        if isinstance(hi, tuple):
            _, p, s, t = hi
            hi = float(volumes[p][s, t])
        if isinstance(cost, tuple):
            _, p, s, t = cost
            cost = float(prices[p][s, t])
        c[j], cl[j], cu[j] = cost, lo, hi
        names.append(f"{family}_" + "_".join(str(k) for k in key))
    rows = list(fcrn_rows(instance, scenario, da_vals=da_vals))
    data, ri, ci = [], [], []
    rlo = np.zeros(len(rows))
    rhi = np.zeros(len(rows))
    rnames = []
    rowix = {}
    for i, (family, key, coefs, lo, hi) in enumerate(rows):
        rowix[(family, key)] = i
        for ref, a in coefs.items():
            ri.append(i)
            ci.append(colix[ref])
            data.append(a)
        rlo[i], rhi[i] = lo, hi
        rnames.append(f"{family}_" + "_".join(str(k) for k in key))
    lp = LinearProgram(
        sense="min",
        c=c,
        a=sp.csr_matrix((data, (ri, ci)), shape=(len(rows), len(cols))),
        row_lower=rlo,
        row_upper=rhi,
        col_lower=cl,
        col_upper=cu,
        row_names=rnames,
        col_names=names,
    )
    return FcrnLp(lp, colix, rowix, instance, scenario, prices, volumes)


def clear_fcrn(fc_lp: FcrnLp, warm_basis=None) -> ClearingResult:
    """Solve the reserve LP; the per-period price is the balance-row dual."""
    sol = solve_lp(fc_lp.lp, warm_basis=warm_basis)
    if sol.status != OPTIMAL:
        return ClearingResult(sol.status, float("nan"), None, {}, {}, sol)
    ins = fc_lp.instance
    nt, nb = ins.horizon, ins.num_segments
    nsu = len(nonstrategic_units(ins))
    nst = len(ins.strategic)
    st_map = {p: k for k, (p, _) in enumerate(strategic_plants(ins))}
    x, d, y = sol.x, sol.reduced_costs, sol.y

    p_fc = np.zeros((nst, nb, nt))
    theta1 = np.zeros((nst, nb, nt))
    sigma_p = np.zeros((nst, nb, nt))
    g_fc = np.zeros((nsu, nt))
    sigma_g = np.zeros((nsu, nt))
    for (family, key), j in fc_lp.col.items():
        if family == "pfc":
            p, s, t = key
            p_fc[st_map[p], s, t] = x[j]
            theta1[st_map[p], s, t] = max(-d[j], 0.0)
            sigma_p[st_map[p], s, t] = max(d[j], 0.0)
        else:
            u, t = key
            g_fc[u, t] = x[j]
            sigma_g[u, t] = max(d[j], 0.0)

    lam = np.zeros(nt)
    theta6 = np.zeros((nsu, nt))
    theta7 = np.zeros((nsu, nt))
    theta9 = np.zeros((nst, nb, nt))
    theta10 = np.zeros((nsu, nt))
    for (family, key), i in fc_lp.row.items():
        yi = y[i]
        if family == "fbal":
            lam[key[0]] = yi
        elif family == "th6":
            theta6[key] = max(yi, 0.0)
        elif family == "th7":
            theta7[key] = max(-yi, 0.0)
        elif family == "th9":
            p, s, t = key
            theta9[st_map[p], s, t] = max(-yi, 0.0)
        elif family == "th10":
            theta10[key] = max(-yi, 0.0)

    dispatch = {"p_fc": p_fc, "g_fc": g_fc}
    duals = {
        "lambda_fc": lam,
        "theta1": theta1,
        "sigma_p": sigma_p,
        "sigma_g": sigma_g,
        "theta6": theta6,
        "theta7": theta7,
        "theta9": theta9,
        "theta10": theta10,
    }
    return ClearingResult(OPTIMAL, sol.objective, lam, dispatch, duals, sol)


def fcrn_kkt_residuals(fc_lp: FcrnLp, result: ClearingResult) -> KktReport:
    """KKT residuals plus the offered-volume complementarity products and the
    strong-duality identity residual."""
    sol = result.solution
    rep = generic_kkt_residuals(fc_lp.lp, sol)
    worst = 0.0
    for (family, key), j in fc_lp.col.items():
        if family != "pfc":
            continue
        p, s, t = key
        cap = fc_lp.bid_volumes[p][s, t]
        worst = max(worst, abs(max(-sol.reduced_costs[j], 0.0) * (cap - sol.x[j])))
    rep.details["offer_cap_compl"] = worst
    rep.details["strong_duality_gap"] = abs(result.objective - dual_objective_named(fc_lp.lp, sol))
    rep.complementarity = max(rep.complementarity, worst)
    return rep
