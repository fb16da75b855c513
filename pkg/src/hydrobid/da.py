"""Day-ahead market clearing: cost minimization by the operator for fixed
strategic bids and one scenario.

The LP structure (columns, equality rows, bounds) is generated by
functions that both this module and the single-level reformulation share,
so the KKT system written by the reformulator matches the cleared LP
coefficient for coefficient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lp import OPTIMAL, LinearProgram, LpSolution, solve_lp
from .model import BidCurve, MarketInstance, Scenario

__all__ = [
    "DaLp",
    "ClearingResult",
    "KktReport",
    "build_da_lp",
    "clear_da",
    "kkt_residuals",
    "strong_duality_gap",
]


@dataclass
class NsUnit:
    """Row of the non-strategic unit table (hydro first, thermal after)."""

    name: str
    node: int
    p_max: float
    cost_da: float
    is_thermal: bool
    plant_index: int  # into instance.hydro_plants, -1 for thermal
    unit_index: int  # into instance.units, for scenario.cost_fc lookups
    droop: float


def nonstrategic_units(instance: MarketInstance) -> list[NsUnit]:
    out = []
    for i, p in enumerate(instance.hydro_plants):
        if p.strategic:
            continue
        out.append(NsUnit(p.name, p.node, p.p_max, 0.0, False, i, i, p.droop))
    nh = len(instance.hydro_plants)
    for j, u in enumerate(instance.thermal_units):
        # thermal governors get a nominal droop; with zero frequency deviation
        # the obligation vanishes anyway
        out.append(NsUnit(u.name, u.node, u.p_max, u.cost_da, True, -1, nh + j, 4.0))
    return out


def strategic_plants(instance: MarketInstance):
    return [(i, p) for i, p in enumerate(instance.hydro_plants) if p.strategic]


def water_chain(instance: MarketInstance, scenario: Scenario) -> np.ndarray:
    """Per-plant value of one stored m3: future price times downstream mu sum."""
    return scenario.future_price * (instance.cascade.downstream @ scenario.future_mu)


# ---------------------------------------------------------------------------
# shared structure: columns, bounds and equality rows of the DA clearing LP
# ---------------------------------------------------------------------------
#
# Column families (keys):
#   ("pda", p, s, t)   strategic dispatch per bid segment
#   ("g", u, t)        non-strategic dispatch (u indexes nonstrategic_units)
#   ("pl", l, t)       line flow
#   ("q", n, k, t)     discharge per hydro plant segment
#   ("spill", n, t)
#   ("m", n, t)        reservoir content
#
# Equality row families:
#   ("bal", node, t)   nodal balance, dual lambda
#   ("hyd", n, t)      hydrological balance, dual eta1
#   ("prod", u, t)     non-strategic hydro production equivalence, dual eta2
#
# Bound duals (from variable bounds in the LP, explicit rows in the MILP):
#   pda: nu6, g: nu7, pl: nu5, q: nu2, spill: nu4, m: nu3


def da_columns(instance: MarketInstance, scenario: Scenario):
    """Yield (family, key, lo, hi, cost); bid-dependent fields are markers.

    For strategic dispatch the cost is ("bid", p, s, t) and the upper bound
    ("vol", p, s, t); the LP builder substitutes the offered price/volume,
    the reformulator substitutes its decision variables.
    """
    nt = instance.horizon
    chain = water_chain(instance, scenario)
    for p, plant in strategic_plants(instance):
        for s in range(instance.num_segments):
            for t in range(nt):
                yield ("pda", (p, s, t), 0.0, ("vol", p, s, t), ("bid", p, s, t))
    for u, unit in enumerate(nonstrategic_units(instance)):
        for t in range(nt):
            yield ("g", (u, t), 0.0, unit.p_max, unit.cost_da)
    for l, (_, _, cap) in enumerate(instance.topology.lines):
        for t in range(nt):
            yield ("pl", (l, t), -cap, cap, 0.0)
    for n, plant in enumerate(instance.hydro_plants):
        for k, (_, qlo, qhi) in enumerate(plant.segments):
            for t in range(nt):
                yield ("q", (n, k, t), qlo, qhi, 0.0)
        for t in range(nt):
            yield ("spill", (n, t), plant.spill_min, plant.spill_max, 0.0)
        for t in range(nt):
            cost = 0.0
            if t == nt - 1 and not plant.strategic:
                cost = -chain[n]
            yield ("m", (n, t), plant.reservoir_min, plant.reservoir_max, cost)


def da_rows(instance: MarketInstance, scenario: Scenario):
    """Yield (family, key, coefs, rhs) for the equality rows.

    ``coefs`` maps (family, key) column references to coefficients.
    """
    nt = instance.horizon
    ns = nonstrategic_units(instance)
    inc = instance.topology.incidence()
    for node in range(instance.topology.node_count):
        for t in range(nt):
            coefs = {}
            for p, plant in strategic_plants(instance):
                if plant.node == node:
                    for s in range(instance.num_segments):
                        coefs[("pda", (p, s, t))] = 1.0
            for u, unit in enumerate(ns):
                if unit.node == node:
                    coefs[("g", (u, t))] = 1.0
            for l in range(len(instance.topology.lines)):
                if inc[l, node] != 0.0:
                    coefs[("pl", (l, t))] = inc[l, node]
            yield ("bal", (node, t), coefs, float(scenario.demand_da[node, t]))
    up = instance.cascade.upstream
    tau = instance.cascade.tau
    for n, plant in enumerate(instance.hydro_plants):
        for t in range(nt):
            coefs = {("m", (n, t)): 1.0, ("spill", (n, t)): 1.0}
            for k in range(len(plant.segments)):
                coefs[("q", (n, k, t))] = 1.0
            if t > 0:
                coefs[("m", (n, t - 1))] = -1.0
            rhs = float(scenario.inflow[n, t])
            if t == 0:
                rhs += float(scenario.initial_content[n])
            for j, pj in enumerate(instance.hydro_plants):
                if up[n, j] == 0.0:
                    continue
                ts = t - int(tau[j])
                if ts >= 0:
                    for k in range(len(pj.segments)):
                        coefs[("q", (j, k, ts))] = coefs.get(("q", (j, k, ts)), 0.0) - 1.0
                    coefs[("spill", (j, ts))] = coefs.get(("spill", (j, ts)), 0.0) - 1.0
                else:
                    rhs += pj.hist_release
            yield ("hyd", (n, t), coefs, rhs)
    for u, unit in enumerate(ns):
        if unit.is_thermal:
            continue
        plant = instance.hydro_plants[unit.plant_index]
        for t in range(nt):
            coefs = {("g", (u, t)): 1.0}
            for k, (mu, _, _) in enumerate(plant.segments):
                coefs[("q", (unit.plant_index, k, t))] = -mu
            yield ("prod", (u, t), coefs, 0.0)


def _resolve_bids(instance: MarketInstance, bids: dict[str, BidCurve]):
    """Check and unpack strategic DA bid curves into (price, volume) arrays."""
    nb, nt = instance.num_segments, instance.horizon
    sts = strategic_plants(instance)
    names = {plant.name for _, plant in sts}
    for nm in bids:
        if nm not in names:
            raise ValueError(f"bid curve references unknown strategic unit {nm!r}")
    prices, volumes = {}, {}
    for p, plant in sts:
        curve = bids.get(plant.name)
        if curve is None:
            raise ValueError(f"missing DA bid curve for strategic unit {plant.name!r}")
        if curve.prices.shape != (nb, nt):
            raise ValueError(f"bid curve for {plant.name!r} has shape {curve.prices.shape}, want {(nb, nt)}")
        if not curve.is_monotone():
            raise ValueError(f"bid curve for {plant.name!r} is not monotone in segment index")
        bb = instance.bid_bounds[plant.name]
        lo = bb.da_min if curve.market == "da" else bb.fc_min
        hi = bb.da_max if curve.market == "da" else bb.fc_max
        if (curve.prices < lo - 1e-9).any() or (curve.prices > hi + 1e-9).any():
            raise ValueError(f"bid prices for {plant.name!r} violate bid bounds")
        if (curve.volumes < -1e-9).any():
            raise ValueError(f"negative bid volume for {plant.name!r}")
        prices[p] = curve.prices
        volumes[p] = curve.volumes
    return prices, volumes


@dataclass
class DaLp:
    """Materialized DA clearing LP with named variable and row maps."""

    lp: LinearProgram
    col: dict[tuple, int]
    row: dict[tuple, int]
    instance: MarketInstance
    scenario: Scenario
    bid_prices: dict[int, np.ndarray]
    bid_volumes: dict[int, np.ndarray]


def build_da_lp(instance: MarketInstance, bids: dict[str, BidCurve], scenario: Scenario) -> DaLp:
    """Assemble the operator's cost-minimizing LP for one scenario."""
    prices, volumes = _resolve_bids(instance, bids)
    cols = list(da_columns(instance, scenario))
    colix: dict[tuple, int] = {}
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
        c[j] = cost
        cl[j] = lo
        cu[j] = hi
        names.append(f"{family}_" + "_".join(str(k) for k in key))
    rows = list(da_rows(instance, scenario))
    data, ri, ci = [], [], []
    rlo = np.zeros(len(rows))
    rhi = np.zeros(len(rows))
    rnames = []
    rowix: dict[tuple, int] = {}
    for i, (family, key, coefs, rhs) in enumerate(rows):
        rowix[(family, key)] = i
        for ref, a in coefs.items():
            ri.append(i)
            ci.append(colix[ref])
            data.append(a)
        rlo[i] = rhi[i] = rhs
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
    return DaLp(lp, colix, rowix, instance, scenario, prices, volumes)


@dataclass
class ClearingResult:
    """Primal dispatch, prices and the full named dual vector of one clearing."""

    status: str
    objective: float
    prices: np.ndarray
    dispatch: dict[str, object]
    duals: dict[str, object]
    solution: LpSolution


def _collect(market_lp, family, shape, source):
    out = np.zeros(shape)
    for key, j in market_lp.col.items():
        if key[0] == family:
            out[key[1]] = source[j]
    return out


def clear_da(da_lp: DaLp, warm_basis=None) -> ClearingResult:
    """Solve the clearing LP; nodal prices are the balance-row duals."""
    sol = solve_lp(da_lp.lp, warm_basis=warm_basis)
    if sol.status != OPTIMAL:
        return ClearingResult(sol.status, float("nan"), None, {}, {}, sol)
    ins = da_lp.instance
    nt = ins.horizon
    nb = ins.num_segments
    nn = ins.topology.node_count
    nl = len(ins.topology.lines)
    nh = len(ins.hydro_plants)
    nst = len(ins.strategic)
    nsu = len(nonstrategic_units(ins))
    x = sol.x
    d = sol.reduced_costs
    y = sol.y

    st_map = {p: k for k, (p, _) in enumerate(strategic_plants(ins))}
    p_da = np.zeros((nst, nb, nt))
    nu6_lo = np.zeros((nst, nb, nt))
    nu6_hi = np.zeros((nst, nb, nt))
    for (family, key), j in da_lp.col.items():
        if family == "pda":
            p, s, t = key
            p_da[st_map[p], s, t] = x[j]
            nu6_lo[st_map[p], s, t] = max(d[j], 0.0)
            nu6_hi[st_map[p], s, t] = max(-d[j], 0.0)

    def bound_duals(family, shape):
        lo = np.zeros(shape)
        hi = np.zeros(shape)
        for (fam, key), j in da_lp.col.items():
            if fam == family:
                lo[key] = max(d[j], 0.0)
                hi[key] = max(-d[j], 0.0)
        return lo, hi

    g = _collect(da_lp, "g", (nsu, nt), x)
    pl = _collect(da_lp, "pl", (nl, nt), x)
    spill = _collect(da_lp, "spill", (nh, nt), x)
    m = _collect(da_lp, "m", (nh, nt), x)
    q = [np.zeros((len(pl_.segments), nt)) for pl_ in ins.hydro_plants]
    nu2_lo = [np.zeros((len(pl_.segments), nt)) for pl_ in ins.hydro_plants]
    nu2_hi = [np.zeros((len(pl_.segments), nt)) for pl_ in ins.hydro_plants]
    for (family, key), j in da_lp.col.items():
        if family == "q":
            n, k, t = key
            q[n][k, t] = x[j]
            nu2_lo[n][k, t] = max(d[j], 0.0)
            nu2_hi[n][k, t] = max(-d[j], 0.0)

    lam = np.zeros((nn, nt))
    eta1 = np.zeros((nh, nt))
    eta2 = np.zeros((nsu, nt))
    for (family, key), i in da_lp.row.items():
        if family == "bal":
            lam[key] = y[i]
        elif family == "hyd":
            eta1[key] = y[i]
        elif family == "prod":
            eta2[key] = y[i]

    nu7_lo, nu7_hi = bound_duals("g", (nsu, nt))
    nu5_lo, nu5_hi = bound_duals("pl", (nl, nt))
    nu4_lo, nu4_hi = bound_duals("spill", (nh, nt))
    nu3_lo, nu3_hi = bound_duals("m", (nh, nt))

    dispatch = {"p_da": p_da, "g_da": g, "p_line": pl, "q": q, "spill": spill, "m": m}
    duals = {
        "lambda": lam,
        "eta1": eta1,
        "eta2": eta2,
        "nu2_lo": nu2_lo,
        "nu2_hi": nu2_hi,
        "nu3_lo": nu3_lo,
        "nu3_hi": nu3_hi,
        "nu4_lo": nu4_lo,
        "nu4_hi": nu4_hi,
        "nu5_lo": nu5_lo,
        "nu5_hi": nu5_hi,
        "nu6_lo": nu6_lo,
        "nu6_hi": nu6_hi,
        "nu7_lo": nu7_lo,
        "nu7_hi": nu7_hi,
    }
    return ClearingResult(OPTIMAL, sol.objective, lam, dispatch, duals, sol)


# ---------------------------------------------------------------------------
# KKT residuals and strong duality, generic over any market LP in this package
# ---------------------------------------------------------------------------


@dataclass
class KktReport:
    stationarity: float
    primal: float
    dual_sign: float
    complementarity: float
    details: dict[str, float] = field(default_factory=dict)

    def max_violation(self) -> float:
        return max(self.stationarity, self.primal, self.dual_sign, self.complementarity)

    def within(self, tol: float) -> bool:
        return self.max_violation() <= tol


def generic_kkt_residuals(lp: LinearProgram, sol: LpSolution, extra: dict[str, float] | None = None) -> KktReport:
    """Residuals of (x, y, d) against the LP's KKT system, in the min sense."""
    sign = 1.0 if lp.sense == "min" else -1.0
    c = sign * lp.c
    x, y, d = sol.x, sign * sol.y, sign * sol.reduced_costs
    a = lp.a
    stat = float(np.max(np.abs(c - a.T @ y - d))) if lp.num_cols else 0.0
    act = a @ x
    pr = 0.0
    if lp.num_rows:
        pr = max(
            float(np.max(np.maximum(lp.row_lower - act, 0.0), initial=0.0)),
            float(np.max(np.maximum(act - lp.row_upper, 0.0), initial=0.0)),
        )
    pr = max(
        pr,
        float(np.max(np.maximum(lp.col_lower - x, 0.0), initial=0.0)),
        float(np.max(np.maximum(x - lp.col_upper, 0.0), initial=0.0)),
    )
    # dual sign: bound duals are the signed parts of d; rows with an interior
    # activity must carry zero dual, rows at one bound carry the right sign
    ds = 0.0
    comp = 0.0
    for j in range(lp.num_cols):
        lo, hi = lp.col_lower[j], lp.col_upper[j]
        nlo, nhi = max(d[j], 0.0), max(-d[j], 0.0)
        if np.isfinite(lo):
            comp = max(comp, abs(nlo * (x[j] - lo)))
        elif nlo > 1e-9:
            ds = max(ds, nlo)
        if np.isfinite(hi):
            comp = max(comp, abs(nhi * (hi - x[j])))
        elif nhi > 1e-9:
            ds = max(ds, nhi)
    for i in range(lp.num_rows):
        lo, hi = lp.row_lower[i], lp.row_upper[i]
        if lo == hi:
            continue
        yi = y[i]
        if yi > 0:  # prices the lower side
            if np.isfinite(lo):
                comp = max(comp, abs(yi * (act[i] - lo)))
            else:
                ds = max(ds, yi)
        elif yi < 0:
            if np.isfinite(hi):
                comp = max(comp, abs(yi) * abs(hi - act[i]))
            else:
                ds = max(ds, -yi)
    rep = KktReport(stat, pr, ds, comp)
    if extra:
        rep.details.update(extra)
    return rep


def kkt_residuals(da_lp: DaLp, result: ClearingResult) -> KktReport:
    """Four KKT residual families plus the bid-cap complementarity products."""
    sol = result.solution
    rep = generic_kkt_residuals(da_lp.lp, sol)
    # the products reused by the strong-duality reformulation
    worst_hi = 0.0
    worst_lo = 0.0
    for (family, key), j in da_lp.col.items():
        if family != "pda":
            continue
        p, s, t = key
        x = sol.x[j]
        cap = da_lp.bid_volumes[p][s, t]
        d = sol.reduced_costs[j]
        worst_hi = max(worst_hi, abs(max(-d, 0.0) * (cap - x)))
        worst_lo = max(worst_lo, abs(max(d, 0.0) * x))
    rep.details["bid_cap_compl"] = worst_hi
    rep.details["bid_floor_compl"] = worst_lo
    rep.complementarity = max(rep.complementarity, worst_hi, worst_lo)
    return rep


def dual_objective_named(lp: LinearProgram, sol: LpSolution) -> float:
    """Dual objective assembled from named pieces: rhs*y plus bound*dual terms."""
    sign = 1.0 if lp.sense == "min" else -1.0
    y = sign * sol.y
    d = sign * sol.reduced_costs
    total = 0.0
    for i in range(lp.num_rows):
        lo, hi = lp.row_lower[i], lp.row_upper[i]
        yi = y[i]
        if lo == hi:
            total += yi * lo
        elif yi > 0 and np.isfinite(lo):
            total += yi * lo
        elif yi < 0 and np.isfinite(hi):
            total += yi * hi
    for j in range(lp.num_cols):
        lo, hi = lp.col_lower[j], lp.col_upper[j]
        dj = d[j]
        if lo == hi:
            total += dj * lo
        elif dj > 0 and np.isfinite(lo):
            total += dj * lo
        elif dj < 0 and np.isfinite(hi):
            total += dj * hi
    return sign * (total + lp.offset)


def strong_duality_gap(da_lp: DaLp, result: ClearingResult) -> float:
    """|primal cost - dual objective| with the dual side built from the named
    duals: demand*lambda, hydro-rhs*eta1, bound*nu terms, ntc*nu5, offered
    volume*nu6 and capacity*nu7."""
    return abs(result.objective - dual_objective_named(da_lp.lp, result.solution))
