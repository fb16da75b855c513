"""Single-level MILP for the strategic bidding problem.

Both market clearings are replaced by their KKT systems (stationarity,
primal feasibility, big-M complementarity with one binary per inequality)
and the bilinear revenue terms by their strong-duality linear equivalents.
The two products of a reserve-market dual with the day-ahead dispatch that
survive the substitution are relaxed with McCormick envelopes and settled
after the solve: the reported solution carries the exact products, which
remain inside the envelopes, so it stays MILP-feasible.

Two deliberate choices beyond the KKT mechanics, both surfaced in reports:

* Clearing-price duals carry explicit bounds (defaults derived from bid
  caps and marginal costs).  At degenerate optima the dual face is a ray,
  and an optimistic seller would otherwise ride its own revenue term into
  the complementarity big-M; the bound settles the published price at the
  market cap, where a capped auction settles too.
* A tiny penalty on strategic day-ahead dispatch breaks ties among
  equal-revenue optima toward leaving energy with non-strategic units; it
  is orders of magnitude below any revenue difference of interest.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import da as da_mod
from . import fcrn as fcrn_mod
from .da import ClearingResult, nonstrategic_units, strategic_plants, water_chain
from .lp import INF, LinearProgram, MilpOptions, MilpResult, MixedIntegerProgram, solve_milp
from .model import BidCurve, MarketInstance, Scenario, validate_instance

__all__ = [
    "BigMConfig",
    "BigMValidityError",
    "UpperLevelVars",
    "MilpSolution",
    "ReformulationReport",
    "mccormick_envelope",
    "build_upper_constraints",
    "build_single_level_milp",
    "solve_bilevel",
    "verify_reformulation",
    "extract_bids",
]


class BigMValidityError(RuntimeError):
    """A complementarity dual landed on its big-M: constants cut the optimum."""


@dataclass
class BigMConfig:
    """Dual bounds and complementarity constants.

    ``m17``/``m20`` bound the reserve headroom and coupling duals (they also
    size the McCormick boxes); ``price_cap_*`` bound the clearing-price
    duals.  Family big-Ms default to a margin above the relevant price
    range and are rejected when set below the bid caps.
    """

    price_cap_da: float | None = None
    price_floor_da: float = 0.0
    price_cap_fc: float | None = None
    price_floor_fc: float = 0.0
    m17: float | None = None
    m20: float | None = None
    dual_m: dict = field(default_factory=dict)
    eta_bound: float | None = None
    tie_break_eps: float = 1e-7
    binary_nudge: float = 1e-9
    price_nudge: float = 1e-6

    def resolved(self, instance: MarketInstance, scenarios: list[Scenario]) -> "ResolvedBigM":
        cap_da_bid = max((float(bb.da_max.max()) for bb in instance.bid_bounds.values()), default=0.0)
        cap_fc_bid = max((float(bb.fc_max.max()) for bb in instance.bid_bounds.values()), default=0.0)
        cost_max = max((u.cost_da for u in instance.thermal_units), default=0.0)
        opp_max = 0.0
        cfc_max = 0.0
        chain_max = 0.0
        for s in scenarios:
            chain = water_chain(instance, s)
            chain_max = max(chain_max, float(chain.max()) if chain.size else 0.0)
            for n, plant in enumerate(instance.hydro_plants):
                if plant.strategic:
                    continue
                for mu, _, _ in plant.segments:
                    opp_max = max(opp_max, chain[n] / mu)
            cfc_max = max(cfc_max, float(s.cost_fc.max()) if s.cost_fc.size else 0.0)
        cap_da = self.price_cap_da if self.price_cap_da is not None else max(cap_da_bid, cost_max, opp_max)
        cap_fc = self.price_cap_fc if self.price_cap_fc is not None else max(cap_fc_bid, cfc_max)
        if cap_da < cap_da_bid - 1e-9:
            raise ValueError("price_cap_da below the strategic bid cap would slice off optima")
        if cap_fc < cap_fc_bid - 1e-9:
            raise ValueError("price_cap_fc below the strategic bid cap would slice off optima")
        mu_max = max((max(p.mu) for p in instance.hydro_plants), default=1.0)
        eta = self.eta_bound if self.eta_bound is not None else 1.5 * (cap_da * max(mu_max, 1.0) + chain_max) + 10.0
        price_m = 1.5 * (cap_da - min(self.price_floor_da, 0.0)) + 10.0
        fc_m = 1.5 * (cap_fc + cfc_max) + 10.0
        hydro_m = 4.0 * eta + 10.0
        m17 = self.m17 if self.m17 is not None else fc_m
        m20 = self.m20 if self.m20 is not None else fc_m
        if m17 < cap_fc_bid or m20 < cap_fc_bid:
            raise ValueError("m17/m20 below the reserve bid price cap would slice off optima")
        dual_m = {
            "nu2": hydro_m,
            "nu3": hydro_m,
            "nu4": hydro_m,
            "nu5": price_m,
            "nu6": price_m,
            "nu7": price_m,
            "theta1": fc_m,
            "theta6": fc_m,
            "theta7": m17,
            "theta9": fc_m,
            "theta10": m20,
            "sigma_p": fc_m,
            "sigma_g": fc_m,
        }
        dual_m.update(self.dual_m)
        return ResolvedBigM(
            price_cap_da=cap_da,
            price_floor_da=self.price_floor_da,
            price_cap_fc=cap_fc,
            price_floor_fc=self.price_floor_fc,
            m17=m17,
            m20=m20,
            dual_m=dual_m,
            eta_bound=eta,
            tie_break_eps=self.tie_break_eps,
            binary_nudge=self.binary_nudge,
            price_nudge=self.price_nudge,
        )


@dataclass
class ResolvedBigM:
    price_cap_da: float
    price_floor_da: float
    price_cap_fc: float
    price_floor_fc: float
    m17: float
    m20: float
    dual_m: dict
    eta_bound: float
    tie_break_eps: float
    binary_nudge: float
    price_nudge: float


def mccormick_envelope(x_bounds, y_bounds):
    """Four linear inequalities cx*x + cy*y + ce*E <= rhs over a box.

    Together they sandwich the product E = x*y; the envelope is exact
    whenever either factor sits on one of its bounds.
    """
    xl, xu = map(float, x_bounds)
    yl, yu = map(float, y_bounds)
    if not all(np.isfinite(v) for v in (xl, xu, yl, yu)):
        raise ValueError("McCormick envelope needs finite bounds")
    if xl > xu or yl > yu:
        raise ValueError("empty box")
    return [
        (yl, xl, -1.0, xl * yl),  # E >= xl*y + yl*x - xl*yl
        (yu, xu, -1.0, xu * yu),  # E >= xu*y + yu*x - xu*yu
        (-yl, -xu, 1.0, -xu * yl),  # E <= xu*y + yl*x - xu*yl
        (-yu, -xl, 1.0, -xl * yu),  # E <= xl*y + yu*x - xl*yu
    ]


# ---------------------------------------------------------------------------
# upper-level block
# ---------------------------------------------------------------------------


def build_upper_constraints(instance: MarketInstance, scenarios: list[Scenario]):
    """Rows tying bids, intraday trades and the shared lower-level variables.

    Symbolic references: ("bda"/"bfc"/"vda"/"vfc", p, s, t) and
    ("idp"/"idm", p, t, w) are upper-level decisions; lower-level variables
    appear as (family, key, w).  Raises for an empty strategic set and for
    bid bounds that cannot host a monotone curve (infeasible before any
    solve).
    """
    sts = strategic_plants(instance)
    if not sts:
        raise ValueError("no strategic unit: the bilevel problem is empty")
    nb, nt = instance.num_segments, instance.horizon
    rows = []
    for p, plant in sts:
        bb = instance.bid_bounds[plant.name]
        for t in range(nt):
            markets = [("da", bb.da_min, bb.da_max)]
            if instance.include_fcrn:
                markets.append(("fcrn", bb.fc_min, bb.fc_max))
            for mkt, lo_arr, hi_arr in markets:
                run_lo = -INF
                for s in range(nb):
                    run_lo = max(run_lo, float(lo_arr[s, t]))
                    if run_lo > float(hi_arr[s, t]) + 1e-12:
                        raise ValueError(
                            f"bid bounds of {plant.name!r} cannot host a monotone {mkt} curve at t={t}"
                        )
        for s in range(1, nb):
            for t in range(nt):
                rows.append(
                    (f"mono_da[{p},{s},{t}]", {("bda", p, s - 1, t): 1.0, ("bda", p, s, t): -1.0}, -INF, 0.0)
                )
                if instance.include_fcrn:
                    rows.append(
                        (f"mono_fc[{p},{s},{t}]", {("bfc", p, s - 1, t): 1.0, ("bfc", p, s, t): -1.0}, -INF, 0.0)
                    )
        for w, scen in enumerate(scenarios):
            for t in range(nt):
                env_hi = {("idp", p, t, w): 1.0, ("idm", p, t, w): -1.0}
                env_lo = {("idp", p, t, w): 1.0, ("idm", p, t, w): -1.0}
                for s in range(nb):
                    env_hi[("vda", p, s, t)] = 1.0
                    env_lo[("vda", p, s, t)] = 1.0
                    if instance.include_fcrn:
                        env_hi[("vfc", p, s, t)] = 1.0
                        env_lo[("vfc", p, s, t)] = -1.0
                rows.append((f"env_hi[{p},{t},{w}]", env_hi, -INF, plant.p_max))
                rows.append((f"env_lo[{p},{t},{w}]", env_lo, 0.0, INF))
                bal = {("idp", p, t, w): -1.0, ("idm", p, t, w): 1.0}
                for k, (mu, _, _) in enumerate(plant.segments):
                    bal[("q", (p, k, t), w)] = mu
                for s in range(nb):
                    bal[("pda", (p, s, t), w)] = -1.0
                rows.append((f"prodbal[{p},{t},{w}]", bal, 0.0, 0.0))
                if instance.include_fcrn:
                    req = fcrn_mod.fcrn_requirement(plant.p_max, float(scen.freq_dev[t]), plant.droop)
                    floor = {("pfc", (p, s, t), w): 1.0 for s in range(nb)}
                    rows.append((f"st_droop[{p},{t},{w}]", floor, req, INF))
    return rows


# ---------------------------------------------------------------------------
# MILP assembly
# ---------------------------------------------------------------------------


class _ProgBuilder:
    def __init__(self):
        self.names: list[str] = []
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.obj: list[float] = []
        self.binary: list[int] = []
        self.rows: list[tuple] = []

    def var(self, name, lo, hi, obj=0.0, binary=False) -> int:
        j = len(self.names)
        self.names.append(name)
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.obj.append(float(obj))
        if binary:
            self.binary.append(j)
        return j

    def add_obj(self, j, coef):
        self.obj[j] += float(coef)

    def row(self, name, coefs, lo, hi):
        self.rows.append((name, dict(coefs), float(lo), float(hi)))

    def build(self, sense) -> MixedIntegerProgram:
        data, ri, ci = [], [], []
        rlo = np.zeros(len(self.rows))
        rhi = np.zeros(len(self.rows))
        rnames = []
        for i, (nm, coefs, lo, hi) in enumerate(self.rows):
            rnames.append(nm)
            rlo[i], rhi[i] = lo, hi
            for j, a in coefs.items():
                ri.append(i)
                ci.append(j)
                data.append(a)
        lp = LinearProgram(
            sense=sense,
            c=np.array(self.obj),
            a=sp.csr_matrix((data, (ri, ci)), shape=(len(self.rows), len(self.names))),
            row_lower=rlo,
            row_upper=rhi,
            col_lower=np.array(self.lo),
            col_upper=np.array(self.hi),
            row_names=rnames,
            col_names=list(self.names),
        )
        return MixedIntegerProgram(lp, list(self.binary))


def _reachable_water(instance: MarketInstance, scenario: Scenario) -> np.ndarray:
    """Upper bound on the water that can sit at station n by period t."""
    nh = len(instance.hydro_plants)
    nt = instance.horizon
    up = instance.cascade.upstream
    base = scenario.initial_content[:, None] + np.cumsum(scenario.inflow, axis=1)
    w = base.copy()
    for _ in range(nh):
        prev = w.copy()
        for n in range(nh):
            extra = np.zeros(nt)
            for j in range(nh):
                if up[n, j]:
                    extra += prev[j, :] + instance.hydro_plants[j].hist_release * max(int(instance.cascade.tau[j]), 0)
            w[n, :] = base[n, :] + extra
        if np.allclose(w, prev):
            break
    return w


@dataclass
class _ComplEntry:
    name: str
    family: str
    dual_col: int
    z_col: int | None
    m_dual: float


@dataclass
class UpperLevelVars:
    bid_price_da: np.ndarray  # (n_st, NB, NT)
    bid_volume_da: np.ndarray
    bid_price_fc: np.ndarray
    bid_volume_fc: np.ndarray
    id_sell: np.ndarray  # (n_st, NT, NW)
    id_buy: np.ndarray


@dataclass
class BilevelProgram:
    mip: MixedIntegerProgram
    instance: MarketInstance
    scenarios: list[Scenario]
    bigm: ResolvedBigM
    upper: dict
    scen_col: list[dict]
    compl: list[_ComplEntry]
    pruned_rows: int = 0


def build_single_level_milp(
    instance: MarketInstance, scenarios: list[Scenario], bigm: BigMConfig | None = None
) -> BilevelProgram:
    """Assemble the optimistic single-level MILP over all scenarios."""
    bad = validate_instance(instance)
    if bad:
        raise ValueError("invalid instance: " + "; ".join(bad))
    cfg = (bigm or BigMConfig()).resolved(instance, scenarios)
    nb, nt = instance.num_segments, instance.horizon
    sts = strategic_plants(instance)
    ns = nonstrategic_units(instance)
    b = _ProgBuilder()
    pruned = 0

    upper: dict = {}
    for p, plant in sts:
        bb = instance.bid_bounds[plant.name]
        # offered volume may exceed capacity when funded by intraday buys;
        # the capacity envelopes are the binding cap
        vol_hi = plant.p_max + plant.id_volume_cap
        for s in range(nb):
            for t in range(nt):
                upper[("bda", p, s, t)] = b.var(f"bda[{p},{s},{t}]", bb.da_min[s, t], bb.da_max[s, t])
                upper[("vda", p, s, t)] = b.var(f"vda[{p},{s},{t}]", 0.0, vol_hi)
                if instance.include_fcrn:
                    upper[("bfc", p, s, t)] = b.var(f"bfc[{p},{s},{t}]", bb.fc_min[s, t], bb.fc_max[s, t])
                    upper[("vfc", p, s, t)] = b.var(f"vfc[{p},{s},{t}]", 0.0, vol_hi)
        for w in range(len(scenarios)):
            for t in range(nt):
                upper[("idp", p, t, w)] = b.var(f"idp[{p},{t},{w}]", 0.0, plant.id_volume_cap)
                upper[("idm", p, t, w)] = b.var(f"idm[{p},{t},{w}]", 0.0, plant.id_volume_cap)

    compl: list[_ComplEntry] = []
    scen_col: list[dict] = []

    def add_compl(name, family, dual_col, slack_coefs, slack_const, slack_max):
        """slack = sum(coefs * x) + slack_const in [0, slack_max]; slack*dual = 0."""
        m_dual = cfg.dual_m[family]
        if slack_max <= 1e-9:
            compl.append(_ComplEntry(name, family, dual_col, None, m_dual))
            return
        z = b.var(f"z_{name}", 0.0, 1.0, obj=-cfg.binary_nudge, binary=True)
        coefs = dict(slack_coefs)
        coefs[z] = slack_max
        b.row(f"cs_{name}", coefs, -INF, slack_max - slack_const)
        b.row(f"cd_{name}", {dual_col: 1.0, z: -m_dual}, -INF, 0.0)
        compl.append(_ComplEntry(name, family, dual_col, z, m_dual))

    for w, scen in enumerate(scenarios):
        pi = float(scen.probability)
        sc: dict = {}
        scen_col.append(sc)
        chain = water_chain(instance, scen)
        reach = _reachable_water(instance, scen)
        max_flow = sum(u.p_max for u in instance.units)

        stationarity: dict[tuple, dict[int, float]] = {}
        stationarity_rhs: dict[tuple, float] = {}
        interval: dict[tuple, tuple[float, float]] = {}

        def stat_add(ref, col, coef):
            terms = stationarity[ref]
            terms[col] = terms.get(col, 0.0) + coef

        def lower_var(family, key, lo, hi):
            j = b.var(f"{family}{list(key)}@{w}", lo, hi)
            sc[(family, key)] = j
            stationarity[(family, key)] = {}
            stationarity_rhs[(family, key)] = 0.0
            interval[(family, key)] = (lo if np.isfinite(lo) else -INF, hi if np.isfinite(hi) else INF)
            return j

        da_cols = list(da_mod.da_columns(instance, scen))
        for family, key, lo, hi, cost in da_cols:
            if isinstance(hi, tuple):
                _, p, s, t = hi
                plant = instance.hydro_plants[p]
                lower_var(family, key, 0.0, plant.p_max + plant.id_volume_cap)
            else:
                lower_var(family, key, lo, hi)
            ref = (family, key)
            if isinstance(cost, tuple):
                _, p, s, t = cost
                stat_add(ref, upper[("bda", p, s, t)], 1.0)
            elif cost:
                stationarity_rhs[ref] -= cost

        fc_cols = list(fcrn_mod.fcrn_columns(instance, scen)) if instance.include_fcrn else []
        for family, key, lo, hi, cost in fc_cols:
            if family == "pfc":
                p, s, t = key
                plant = instance.hydro_plants[p]
                lower_var(family, key, 0.0, plant.p_max + plant.id_volume_cap)
                stat_add((family, key), upper[("bfc", p, s, t)], 1.0)
            else:
                u, t = key
                lower_var(family, key, 0.0, ns[u].p_max)
                stationarity_rhs[(family, key)] -= cost

        # equality rows and their free (but boxed) duals
        for family, key, coefs, rhs in da_mod.da_rows(instance, scen):
            if family == "bal":
                ycol = b.var(f"lam{list(key)}@{w}", cfg.price_floor_da, cfg.price_cap_da)
            elif family == "hyd":
                ycol = b.var(f"eta1{list(key)}@{w}", -cfg.eta_bound, cfg.eta_bound)
            else:
                ycol = b.var(f"eta2{list(key)}@{w}", -cfg.eta_bound, cfg.eta_bound)
            sc[("dual", family, key)] = ycol
            b.row(f"{family}{list(key)}@{w}", {sc[ref]: a for ref, a in coefs.items()}, rhs, rhs)
            for ref, a in coefs.items():
                stat_add(ref, ycol, -a)
            b.add_obj(ycol, pi * rhs)

        # day-ahead bound rows (the nu duals) with interval-based pruning
        fam_of = {"pda": "nu6", "g": "nu7", "pl": "nu5", "q": "nu2", "spill": "nu4", "m": "nu3"}
        for family, key, lo, hi, cost in da_cols:
            ref = (family, key)
            j = sc[ref]
            dfam = fam_of[family]
            vlo, vhi = interval[ref]
            if isinstance(hi, tuple):
                _, p, s, t = hi
                vcol = upper[("vda", p, s, t)]
                dual = b.var(f"{dfam}_hi{list(key)}@{w}", 0.0, cfg.dual_m[dfam])
                sc[("dual", dfam + "_hi", key)] = dual
                b.row(f"r{dfam}_hi{list(key)}@{w}", {j: 1.0, vcol: -1.0}, -INF, 0.0)
                stat_add(ref, dual, 1.0)
                add_compl(f"{dfam}_hi{list(key)}@{w}", dfam, dual, {vcol: 1.0, j: -1.0}, 0.0, vhi)
            elif np.isfinite(hi):
                prune = (
                    (family == "m" and reach[key[0], key[1]] < hi - 1e-6)
                    or (family == "spill" and reach[key[0], key[1]] < hi - 1e-6)
                    or (family == "q" and reach[key[0], key[2]] < hi - 1e-6)
                    or (family == "pl" and max_flow < hi - 1e-6)
                )
                if prune:
                    pruned += 1
                else:
                    dual = b.var(f"{dfam}_hi{list(key)}@{w}", 0.0, cfg.dual_m[dfam])
                    sc[("dual", dfam + "_hi", key)] = dual
                    b.row(f"r{dfam}_hi{list(key)}@{w}", {j: 1.0}, -INF, hi)
                    stat_add(ref, dual, 1.0)
                    b.add_obj(dual, -pi * hi)
                    add_compl(f"{dfam}_hi{list(key)}@{w}", dfam, dual, {j: -1.0}, hi, hi - vlo)
            if np.isfinite(lo):
                prune = family == "pl" and lo < 0 and max_flow < -lo - 1e-6
                if prune:
                    pruned += 1
                else:
                    dual = b.var(f"{dfam}_lo{list(key)}@{w}", 0.0, cfg.dual_m[dfam])
                    sc[("dual", dfam + "_lo", key)] = dual
                    b.row(f"r{dfam}_lo{list(key)}@{w}", {j: 1.0}, lo, INF)
                    stat_add(ref, dual, -1.0)
                    b.add_obj(dual, pi * lo)
                    # available water tightens the slack constant well below
                    # nominal reservoir caps, which also conditions the basis
                    hi_eff = vhi
                    if family in ("m", "spill"):
                        hi_eff = min(hi_eff, reach[key[0], key[1]])
                    elif family == "q":
                        hi_eff = min(hi_eff, reach[key[0], key[2]])
                    add_compl(f"{dfam}_lo{list(key)}@{w}", dfam, dual, {j: 1.0}, -lo, hi_eff - lo)

        # reserve-market rows; the strategic reserve revenue enters the
        # objective through a variable bounded by two equivalent linear
        # estimates (strong-duality form with McCormick E3/E4, and the
        # balance form price*dispatch with McCormick on price*non-strategic
        # reserve), so only the tighter relaxation is ever credited
        if instance.include_fcrn:
            def act_range(coefs):
                alo = ahi = 0.0
                for ref, a in coefs.items():
                    l_, h_ = interval[ref]
                    if a >= 0:
                        alo += a * l_
                        ahi += a * h_
                    else:
                        alo += a * h_
                        ahi += a * l_
                return alo, ahi

            rev_box = cfg.price_cap_fc * float(np.sum(scen.demand_fc)) + 1.0
            rev = b.var(f"fc_revenue@{w}", 0.0, rev_box, obj=pi)
            sc[("fc_revenue",)] = rev
            row_dual = {rev: 1.0}
            row_primal = {rev: 1.0}

            def dual_term(col, coef):
                row_dual[col] = row_dual.get(col, 0.0) - coef

            def primal_term(col, coef):
                row_primal[col] = row_primal.get(col, 0.0) - coef

            for family, key, coefs, lo, hi in fcrn_mod.fcrn_rows(instance, scen, da_vals=None):
                mapped = {sc[ref]: a for ref, a in coefs.items()}
                if family == "fbal":
                    # the tiny price nudge settles degenerate-reserve-price
                    # ties on the vertex where both revenue estimates are
                    # exact (the cap) instead of a fake interior price
                    ycol = b.var(
                        f"lamfc{list(key)}@{w}", cfg.price_floor_fc, cfg.price_cap_fc, obj=pi * cfg.price_nudge
                    )
                    sc[("dual", "lambda_fc", key)] = ycol
                    b.row(f"fbal{list(key)}@{w}", mapped, lo, hi)
                    for ref, a in coefs.items():
                        if ref[0] in ("pfc", "gfc"):
                            stat_add(ref, ycol, -a)
                    dual_term(ycol, lo)
                    primal_term(ycol, lo)
                    continue
                dfam = {"th6": "theta6", "th7": "theta7", "th9": "theta9", "th10": "theta10"}[family]
                dual = b.var(f"{dfam}{list(key)}@{w}", 0.0, cfg.dual_m[dfam])
                sc[("dual", dfam, key)] = dual
                b.row(f"r{family}{list(key)}@{w}", mapped, lo, hi)
                alo, ahi = act_range(coefs)
                if family == "th6":
                    for ref, a in coefs.items():
                        if ref[0] in ("pfc", "gfc"):
                            stat_add(ref, dual, -a)
                    dual_term(dual, lo)
                    add_compl(f"{family}{list(key)}@{w}", dfam, dual, dict(mapped), -lo, ahi - lo)
                else:
                    for ref, a in coefs.items():
                        if ref[0] in ("pfc", "gfc"):
                            stat_add(ref, dual, a)
                    if family == "th7":
                        dual_term(dual, -hi)
                    add_compl(
                        f"{family}{list(key)}@{w}", dfam, dual, {c: -a for c, a in mapped.items()}, hi, hi - alo
                    )
                if family in ("th7", "th10"):
                    u, t = key
                    gcol = sc[("g", (u, t))]
                    tag = "e3" if family == "th7" else "e4"
                    e = b.var(f"{tag}[{u},{t}]@{w}", 0.0, cfg.dual_m[dfam] * ns[u].p_max)
                    sc[(tag, key)] = e
                    for r_i, (cx, cy, ce, rhs) in enumerate(
                        mccormick_envelope((0.0, cfg.dual_m[dfam]), (0.0, ns[u].p_max))
                    ):
                        b.row(f"mc_{tag}{list(key)}@{w}_{r_i}", {dual: cx, gcol: cy, e: ce}, -INF, rhs)
                    dual_term(e, 1.0 if tag == "e3" else -1.0)

            for u, unit in enumerate(ns):
                for t in range(nt):
                    cfc = float(scen.cost_fc[unit.unit_index, t])
                    if cfc:
                        dual_term(sc[("gfc", (u, t))], -cfc)
                    lam_col = sc[("dual", "lambda_fc", (t,))]
                    gcol = sc[("gfc", (u, t))]
                    g_hi = min(unit.p_max, float(scen.demand_fc[t]))
                    wvar = b.var(f"wfc[{u},{t}]@{w}", 0.0, cfg.price_cap_fc * g_hi if g_hi else 0.0)
                    sc[("wfc", (u, t))] = wvar
                    for r_i, (cx, cy, ce, rhs) in enumerate(
                        mccormick_envelope((cfg.price_floor_fc, cfg.price_cap_fc), (0.0, g_hi))
                    ):
                        b.row(f"mc_wfc[{u},{t}]@{w}_{r_i}", {lam_col: cx, gcol: cy, wvar: ce}, -INF, rhs)
                    primal_term(wvar, -1.0)
            b.row(f"fcrev_dual@{w}", row_dual, -INF, 0.0)
            b.row(f"fcrev_primal@{w}", row_primal, -INF, 0.0)

            for family, key, lo, hi, cost in fc_cols:
                ref = (family, key)
                j = sc[ref]
                if family == "pfc":
                    p, s, t = key
                    plant = instance.hydro_plants[p]
                    dual = b.var(f"sigma_p{list(key)}@{w}", 0.0, cfg.dual_m["sigma_p"])
                    sc[("dual", "sigma_p", key)] = dual
                    b.row(f"rsigma_p{list(key)}@{w}", {j: 1.0}, 0.0, INF)
                    stat_add(ref, dual, -1.0)
                    add_compl(f"sigma_p{list(key)}@{w}", "sigma_p", dual, {j: 1.0}, 0.0, interval[ref][1])
                    vcol = upper[("vfc", p, s, t)]
                    cap = b.var(f"theta1{list(key)}@{w}", 0.0, cfg.dual_m["theta1"])
                    sc[("dual", "theta1", key)] = cap
                    b.row(f"rtheta1{list(key)}@{w}", {j: 1.0, vcol: -1.0}, -INF, 0.0)
                    stat_add(ref, cap, 1.0)
                    add_compl(
                        f"theta1{list(key)}@{w}",
                        "theta1",
                        cap,
                        {vcol: 1.0, j: -1.0},
                        0.0,
                        plant.p_max + plant.id_volume_cap,
                    )
                else:
                    dual = b.var(f"sigma_g{list(key)}@{w}", 0.0, cfg.dual_m["sigma_g"])
                    sc[("dual", "sigma_g", key)] = dual
                    b.row(f"rsigma_g{list(key)}@{w}", {j: 1.0}, 0.0, INF)
                    stat_add(ref, dual, -1.0)
                    add_compl(f"sigma_g{list(key)}@{w}", "sigma_g", dual, {j: 1.0}, 0.0, interval[ref][1])

        for ref, terms in stationarity.items():
            b.row(f"stat_{ref[0]}{list(ref[1])}@{w}", terms, stationarity_rhs[ref], stationarity_rhs[ref])

        # explicit objective pieces: thermal cost, water values, intraday
        # revenue and the dispatch tie-break (reserve terms live in fc_revenue)
        for u, unit in enumerate(ns):
            for t in range(nt):
                if unit.is_thermal and unit.cost_da:
                    b.add_obj(sc[("g", (u, t))], -pi * unit.cost_da)
        for n, plant in enumerate(instance.hydro_plants):
            if plant.strategic:
                b.add_obj(sc[("m", (n, nt - 1))], pi * chain[n])
        for p, plant in sts:
            for t in range(nt):
                b.add_obj(upper[("idp", p, t, w)], pi * float(scen.id_price_up[plant.node, t]))
                b.add_obj(upper[("idm", p, t, w)], -pi * float(scen.id_price_down[plant.node, t]))
                for s in range(nb):
                    b.add_obj(sc[("pda", (p, s, t))], -cfg.tie_break_eps * pi)

    for name, coefs, lo, hi in build_upper_constraints(instance, scenarios):
        mapped = {}
        for ref, a in coefs.items():
            if len(ref) == 3 and isinstance(ref[1], tuple):
                mapped[scen_col[ref[2]][(ref[0], ref[1])]] = a
            else:
                mapped[upper[ref]] = a
        b.row(name, mapped, lo, hi)

    mip = b.build("max")
    return BilevelProgram(mip, instance, scenarios, cfg, upper, scen_col, compl, pruned)


# ---------------------------------------------------------------------------
# solving, extraction and verification
# ---------------------------------------------------------------------------


@dataclass
class MilpSolution:
    status: str
    upper: UpperLevelVars
    objective: float  # linear form, exact products in the E slots
    objective_bilinear: float
    decomposition: dict[str, float]
    prices_da: list[np.ndarray]  # per scenario (nodes, NT)
    prices_fc: list[np.ndarray]  # per scenario (NT,)
    da_results: list[ClearingResult]
    fc_results: list[ClearingResult | None]
    e3: list[np.ndarray]
    e4: list[np.ndarray]
    mccormick_gaps: list[tuple]
    milp: MilpResult
    program: BilevelProgram


def _upper_values(prog: BilevelProgram, x: np.ndarray) -> UpperLevelVars:
    ins = prog.instance
    nb, nt, nw = ins.num_segments, ins.horizon, len(prog.scenarios)
    sts = strategic_plants(ins)
    nst = len(sts)
    bda = np.zeros((nst, nb, nt))
    vda = np.zeros((nst, nb, nt))
    bfc = np.zeros((nst, nb, nt))
    vfc = np.zeros((nst, nb, nt))
    idp = np.zeros((nst, nt, nw))
    idm = np.zeros((nst, nt, nw))
    for k, (p, plant) in enumerate(sts):
        for s in range(nb):
            for t in range(nt):
                bda[k, s, t] = x[prog.upper[("bda", p, s, t)]]
                vda[k, s, t] = x[prog.upper[("vda", p, s, t)]]
                if ins.include_fcrn:
                    bfc[k, s, t] = x[prog.upper[("bfc", p, s, t)]]
                    vfc[k, s, t] = x[prog.upper[("vfc", p, s, t)]]
        for w in range(nw):
            for t in range(nt):
                idp[k, t, w] = x[prog.upper[("idp", p, t, w)]]
                idm[k, t, w] = x[prog.upper[("idm", p, t, w)]]
    return UpperLevelVars(bda, vda, bfc, vfc, idp, idm)


def _scenario_results(prog: BilevelProgram, x: np.ndarray, w: int):
    """Rebuild ClearingResult-shaped records from the embedded block."""
    ins = prog.instance
    scen = prog.scenarios[w]
    sc = prog.scen_col[w]
    nt, nb = ins.horizon, ins.num_segments
    nn = ins.topology.node_count
    nh = len(ins.hydro_plants)
    nl = len(ins.topology.lines)
    ns = nonstrategic_units(ins)
    sts = strategic_plants(ins)
    st_map = {p: k for k, (p, _) in enumerate(sts)}

    def arr(family, shape, keymap=None):
        out = np.zeros(shape)
        for key, j in sc.items():
            if isinstance(key, tuple) and len(key) == 2 and key[0] == family:
                idx = keymap(key[1]) if keymap else key[1]
                out[idx] = x[j]
        return out

    def dual_arr(family, shape, keymap=None):
        out = np.zeros(shape)
        for key, j in sc.items():
            if isinstance(key, tuple) and len(key) == 3 and key[0] == "dual" and key[1] == family:
                idx = keymap(key[2]) if keymap else key[2]
                out[idx] = x[j]
        return out

    p_da = arr("pda", (len(sts), nb, nt), lambda k: (st_map[k[0]], k[1], k[2]))
    g = arr("g", (len(ns), nt))
    pl = arr("pl", (nl, nt))
    spill = arr("spill", (nh, nt))
    m = arr("m", (nh, nt))
    q = [np.zeros((len(p_.segments), nt)) for p_ in ins.hydro_plants]
    for key, j in sc.items():
        if isinstance(key, tuple) and len(key) == 2 and key[0] == "q":
            n, k, t = key[1]
            q[n][k, t] = x[j]
    lam = dual_arr("bal", (nn, nt))
    duals = {
        "lambda": lam,
        "eta1": dual_arr("hyd", (nh, nt)),
        "eta2": dual_arr("prod", (len(ns), nt)),
        "nu3_lo": dual_arr("nu3_lo", (nh, nt)),
        "nu3_hi": dual_arr("nu3_hi", (nh, nt)),
        "nu4_lo": dual_arr("nu4_lo", (nh, nt)),
        "nu4_hi": dual_arr("nu4_hi", (nh, nt)),
        "nu5_lo": dual_arr("nu5_lo", (nl, nt)),
        "nu5_hi": dual_arr("nu5_hi", (nl, nt)),
        "nu6_lo": dual_arr("nu6_lo", (len(sts), nb, nt), lambda k: (st_map[k[0]], k[1], k[2])),
        "nu6_hi": dual_arr("nu6_hi", (len(sts), nb, nt), lambda k: (st_map[k[0]], k[1], k[2])),
        "nu7_lo": dual_arr("nu7_lo", (len(ns), nt)),
        "nu7_hi": dual_arr("nu7_hi", (len(ns), nt)),
    }
    nu2_lo = [np.zeros((len(p_.segments), nt)) for p_ in ins.hydro_plants]
    nu2_hi = [np.zeros((len(p_.segments), nt)) for p_ in ins.hydro_plants]
    for key, j in sc.items():
        if isinstance(key, tuple) and len(key) == 3 and key[0] == "dual" and key[1] in ("nu2_lo", "nu2_hi"):
            n, k, t = key[2]
            (nu2_lo if key[1] == "nu2_lo" else nu2_hi)[n][k, t] = x[j]
    duals["nu2_lo"] = nu2_lo
    duals["nu2_hi"] = nu2_hi
    chain = water_chain(ins, scen)
    cost = 0.0
    for k, (p, plant) in enumerate(sts):
        cost += float(np.sum(prog_bid_price(prog, x, p) * p_da[k]))
    for u, unit in enumerate(ns):
        cost += unit.cost_da * float(g[u].sum())
    for n, plant in enumerate(ins.hydro_plants):
        if not plant.strategic:
            cost -= chain[n] * float(m[n, nt - 1])
    da_res = ClearingResult(
        "optimal",
        cost,
        lam,
        {"p_da": p_da, "g_da": g, "p_line": pl, "q": q, "spill": spill, "m": m},
        duals,
        None,
    )
    if not ins.include_fcrn:
        return da_res, None
    p_fc = arr("pfc", (len(sts), nb, nt), lambda k: (st_map[k[0]], k[1], k[2]))
    g_fc = arr("gfc", (len(ns), nt))
    lamfc = dual_arr("lambda_fc", (nt,), lambda k: k[0])
    fduals = {
        "lambda_fc": lamfc,
        "theta1": dual_arr("theta1", (len(sts), nb, nt), lambda k: (st_map[k[0]], k[1], k[2])),
        "sigma_p": dual_arr("sigma_p", (len(sts), nb, nt), lambda k: (st_map[k[0]], k[1], k[2])),
        "sigma_g": dual_arr("sigma_g", (len(ns), nt)),
        "theta6": dual_arr("theta6", (len(ns), nt)),
        "theta7": dual_arr("theta7", (len(ns), nt)),
        "theta9": dual_arr("theta9", (len(sts), nb, nt), lambda k: (st_map[k[0]], k[1], k[2])),
        "theta10": dual_arr("theta10", (len(ns), nt)),
    }
    fcost = 0.0
    for k, (p, plant) in enumerate(sts):
        fcost += float(np.sum(prog_bid_price(prog, x, p, market="fc") * p_fc[k]))
    for u, unit in enumerate(ns):
        fcost += float(np.sum(scen.cost_fc[unit.unit_index, :] * g_fc[u]))
    fc_res = ClearingResult("optimal", fcost, lamfc, {"p_fc": p_fc, "g_fc": g_fc}, fduals, None)
    return da_res, fc_res


def prog_bid_price(prog: BilevelProgram, x: np.ndarray, p: int, market: str = "da") -> np.ndarray:
    nb, nt = prog.instance.num_segments, prog.instance.horizon
    out = np.zeros((nb, nt))
    key = "bda" if market == "da" else "bfc"
    for s in range(nb):
        for t in range(nt):
            out[s, t] = x[prog.upper[(key, p, s, t)]]
    return out


def _assemble_solution(prog: BilevelProgram, res: MilpResult) -> MilpSolution:
    ins = prog.instance
    x = res.x
    nt = ins.horizon
    sts = strategic_plants(ins)
    ns = nonstrategic_units(ins)
    upper = _upper_values(prog, x)
    da_results, fc_results = [], []
    prices_da, prices_fc = [], []
    e3_list, e4_list = [], []
    gaps = []
    da_rev = fc_rev = id_rev = water = 0.0
    linear_obj = 0.0
    for w, scen in enumerate(prog.scenarios):
        pi = float(scen.probability)
        da_res, fc_res = _scenario_results(prog, x, w)
        da_results.append(da_res)
        fc_results.append(fc_res)
        prices_da.append(da_res.prices)
        if fc_res is not None:
            prices_fc.append(fc_res.prices)
        else:
            prices_fc.append(np.zeros(nt))
        sc = prog.scen_col[w]
        e3 = np.zeros((len(ns), nt))
        e4 = np.zeros((len(ns), nt))
        for key, j in sc.items():
            if isinstance(key, tuple) and len(key) == 2 and key[0] in ("e3", "e4"):
                u, t = key[1]
                exact = (
                    x[sc[("dual", "theta7" if key[0] == "e3" else "theta10", (u, t))]]
                    * x[sc[("g", (u, t))]]
                )
                raw = x[j]
                if abs(raw - exact) > 1e-6 * (1.0 + abs(exact)):
                    gaps.append((w, ns[u].name, t, key[0], raw - exact))
                (e3 if key[0] == "e3" else e4)[u, t] = exact
        e3_list.append(e3)
        e4_list.append(e4)
        # revenue decomposition from primal values and prices
        for k, (p, plant) in enumerate(sts):
            da_rev += pi * float(np.sum(da_res.dispatch["p_da"][k] * da_res.prices[plant.node, :][None, :]))
            if fc_res is not None:
                fc_rev += pi * float(np.sum(fc_res.dispatch["p_fc"][k] * fc_res.prices[None, :]))
            id_rev += pi * float(
                np.sum(scen.id_price_up[plant.node, :] * upper.id_sell[k, :, w])
                - np.sum(scen.id_price_down[plant.node, :] * upper.id_buy[k, :, w])
            )
        chain = water_chain(ins, scen)
        for n, plant in enumerate(ins.hydro_plants):
            if plant.strategic:
                water += pi * chain[n] * float(da_res.dispatch["m"][n, nt - 1])
        linear_obj += pi * _linear_scenario_value(prog, x, w, da_res, fc_res, e3, e4)
    bilinear = da_rev + fc_rev + id_rev + water
    return MilpSolution(
        status=res.status,
        upper=upper,
        objective=linear_obj,
        objective_bilinear=bilinear,
        decomposition={
            "da_revenue": da_rev,
            "fc_revenue": fc_rev,
            "id_revenue": id_rev,
            "water_value": water,
        },
        prices_da=prices_da,
        prices_fc=prices_fc,
        da_results=da_results,
        fc_results=fc_results,
        e3=e3_list,
        e4=e4_list,
        mccormick_gaps=gaps,
        milp=res,
        program=prog,
    )


def _linear_scenario_value(prog, x, w, da_res, fc_res, e3, e4) -> float:
    """Strong-duality linear objective of one scenario at the solution point,
    with the exact bilinear products in the E slots."""
    ins = prog.instance
    scen = prog.scenarios[w]
    sc = prog.scen_col[w]
    ns = nonstrategic_units(ins)
    nt = ins.horizon
    total = 0.0
    for family, key, coefs, rhs in da_mod.da_rows(instance=ins, scenario=scen):
        total += rhs * x[sc[("dual", family, key)]]
    for key, j in sc.items():
        if not (isinstance(key, tuple) and len(key) == 3 and key[0] == "dual"):
            continue
        fam = key[1]
        if fam.startswith("nu") and fam.endswith("_hi"):
            ref = key[2]
            base = fam[:3]
            family = {"nu6": "pda", "nu7": "g", "nu5": "pl", "nu2": "q", "nu4": "spill", "nu3": "m"}[base]
            if family == "pda":
                continue  # offered-volume term cancels in the reformulation
            hi = _data_hi(ins, family, ref)
            total -= hi * x[j]
        elif fam.startswith("nu") and fam.endswith("_lo"):
            ref = key[2]
            base = fam[:3]
            family = {"nu6": "pda", "nu7": "g", "nu5": "pl", "nu2": "q", "nu4": "spill", "nu3": "m"}[base]
            if family == "pda":
                continue
            lo = _data_lo(ins, family, ref)
            total += lo * x[j]
    chain = water_chain(ins, scen)
    for u, unit in enumerate(ns):
        if unit.is_thermal:
            total -= unit.cost_da * float(da_res.dispatch["g_da"][u].sum())
    for n, plant in enumerate(ins.hydro_plants):
        if not plant.strategic:
            total += chain[n] * float(da_res.dispatch["m"][n, nt - 1])
    if fc_res is not None:
        total += float(np.sum(scen.demand_fc * fc_res.duals["lambda_fc"]))
        for u, unit in enumerate(ns):
            for t in range(nt):
                req = fcrn_mod.fcrn_requirement(unit.p_max, float(scen.freq_dev[t]), unit.droop)
                total += req * fc_res.duals["theta6"][u, t]
                total -= unit.p_max * fc_res.duals["theta7"][u, t]
            total += float(e3[u].sum()) - float(e4[u].sum())
            total -= float(np.sum(scen.cost_fc[unit.unit_index, :] * fc_res.dispatch["g_fc"][u]))
    # strategic water value and intraday revenue
    for n, plant in enumerate(ins.hydro_plants):
        if plant.strategic:
            total += chain[n] * float(da_res.dispatch["m"][n, nt - 1])
    sts = strategic_plants(ins)
    for k, (p, plant) in enumerate(sts):
        for t in range(nt):
            total += float(scen.id_price_up[plant.node, t]) * x[prog.upper[("idp", p, t, w)]]
            total -= float(scen.id_price_down[plant.node, t]) * x[prog.upper[("idm", p, t, w)]]
    return total


def _data_hi(ins, family, ref):
    if family == "g":
        return nonstrategic_units(ins)[ref[0]].p_max
    if family == "pl":
        return ins.topology.lines[ref[0]][2]
    if family == "q":
        n, k, t = ref
        return ins.hydro_plants[n].segments[k][2]
    if family == "spill":
        return ins.hydro_plants[ref[0]].spill_max
    if family == "m":
        return ins.hydro_plants[ref[0]].reservoir_max
    raise KeyError(family)


def _data_lo(ins, family, ref):
    if family == "g":
        return 0.0
    if family == "pl":
        return -ins.topology.lines[ref[0]][2]
    if family == "q":
        n, k, t = ref
        return ins.hydro_plants[n].segments[k][1]
    if family == "spill":
        return ins.hydro_plants[ref[0]].spill_min
    if family == "m":
        return ins.hydro_plants[ref[0]].reservoir_min
    raise KeyError(family)


def solve_bilevel(
    instance: MarketInstance,
    scenarios: list[Scenario],
    bigm: BigMConfig | None = None,
    options: MilpOptions | None = None,
) -> MilpSolution:
    """Build, solve and post-process the single-level MILP."""
    prog = build_single_level_milp(instance, scenarios, bigm)
    res = solve_milp(prog.mip, options or MilpOptions())
    if res.x is None:
        raise RuntimeError(f"bilevel MILP terminated without incumbent: {res.status}")
    if res.status not in ("optimal", "limit"):
        raise RuntimeError(f"bilevel MILP search failed with status {res.status!r}")
    # big-M validity: a complementarity dual at its bound means the constant
    # truncated the dual space and the optimum cannot be trusted
    for entry in prog.compl:
        v = res.x[entry.dual_col]
        if v > entry.m_dual - 1e-4 * entry.m_dual:
            raise BigMValidityError(
                f"dual {entry.name} reached its big-M {entry.m_dual}; raise BigMConfig.dual_m[{entry.family!r}]"
            )
    return _assemble_solution(prog, res)


def extract_bids(solution: MilpSolution) -> dict[str, dict[str, BidCurve]]:
    """Sorted stepwise bid curves per strategic unit and market."""
    ins = solution.program.instance
    out = {}
    for k, (p, plant) in enumerate(strategic_plants(ins)):
        entry = {
            "da": BidCurve(plant.name, "da", solution.upper.bid_price_da[k], solution.upper.bid_volume_da[k])
        }
        if ins.include_fcrn:
            entry["fcrn"] = BidCurve(
                plant.name, "fcrn", solution.upper.bid_price_fc[k], solution.upper.bid_volume_fc[k]
            )
        out[plant.name] = entry
    return out


@dataclass
class ReformulationReport:
    objective_gap: float
    reclear_da_gap: list[float]
    reclear_fc_gap: list[float]
    kkt_da: list[float]
    kkt_fc: list[float]
    complementarity: float
    mccormick_gaps: list[tuple]
    passed: bool

    def summary(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (
            f"[{flag}] |linear-bilinear|={self.objective_gap:.3e} "
            f"max_reclear_da={max(self.reclear_da_gap, default=0.0):.3e} "
            f"max_reclear_fc={max(self.reclear_fc_gap, default=0.0):.3e} "
            f"max_kkt={max(self.kkt_da + self.kkt_fc, default=0.0):.3e} "
            f"compl={self.complementarity:.3e} interior_pairs={len(self.mccormick_gaps)}"
        )


def _embedded_lp_solution(lp, col, row, dispatch_x, row_duals, bound_duals):
    """Shape embedded MILP values like an engine solution for residual checks."""
    from .lp import LpSolution

    x = np.zeros(lp.num_cols)
    for ref, j in col.items():
        x[j] = dispatch_x[ref]
    y = np.zeros(lp.num_rows)
    for ref, i in row.items():
        y[i] = row_duals[ref]
    d = np.zeros(lp.num_cols)
    for ref, j in col.items():
        d[j] = bound_duals[ref]
    sol = LpSolution(status="optimal", x=x, y=y, reduced_costs=d, objective=float(lp.c @ x) + lp.offset)
    return sol


def verify_reformulation(
    instance: MarketInstance,
    scenarios: list[Scenario],
    solution: MilpSolution,
    tol: float = 1e-5,
) -> ReformulationReport:
    """Check the linear/bilinear objective identity and re-clear both lower
    problems at the fixed bids, asserting the embedded primal/dual values are
    optimal for them."""
    bids = extract_bids(solution)
    obj_gap = abs(solution.objective - solution.objective_bilinear)
    reclear_da, reclear_fc = [], []
    kkt_da, kkt_fc = [], []
    compl = 0.0
    sts = strategic_plants(instance)
    ns = nonstrategic_units(instance)
    for w, scen in enumerate(scenarios):
        da_res = solution.da_results[w]
        da_lp = da_mod.build_da_lp(instance, {nm: e["da"] for nm, e in bids.items()}, scen)
        fresh = da_mod.clear_da(da_lp)
        reclear_da.append(abs(fresh.objective - da_res.objective))
        sol_emb = _embedded_da_solution(da_lp, instance, da_res, sts, ns)
        rep = da_mod.generic_kkt_residuals(da_lp.lp, sol_emb)
        kkt_da.append(rep.max_violation())
        compl = max(compl, rep.complementarity)
        if instance.include_fcrn and solution.fc_results[w] is not None:
            fc_res = solution.fc_results[w]
            fc_lp = fcrn_mod.build_fcrn_lp(instance, {nm: e["fcrn"] for nm, e in bids.items()}, da_res, scen)
            fresh_fc = fcrn_mod.clear_fcrn(fc_lp)
            reclear_fc.append(abs(fresh_fc.objective - fc_res.objective))
            sol_emb_fc = _embedded_fc_solution(fc_lp, instance, fc_res, sts, ns)
            rep_fc = da_mod.generic_kkt_residuals(fc_lp.lp, sol_emb_fc)
            kkt_fc.append(rep_fc.max_violation())
            compl = max(compl, rep_fc.complementarity)
    scale = 1.0 + abs(solution.objective)
    passed = (
        obj_gap <= tol * scale
        and max(reclear_da, default=0.0) <= 1e-6 * scale
        and max(reclear_fc, default=0.0) <= 1e-6 * scale
        and max(kkt_da + kkt_fc, default=0.0) <= 1e-5 * scale
    )
    return ReformulationReport(
        objective_gap=obj_gap,
        reclear_da_gap=reclear_da,
        reclear_fc_gap=reclear_fc,
        kkt_da=kkt_da,
        kkt_fc=kkt_fc,
        complementarity=compl,
        mccormick_gaps=solution.mccormick_gaps,
        passed=passed,
    )


def _embedded_da_solution(da_lp, instance, da_res, sts, ns):
    x_map, d_map = {}, {}
    st_map = {p: k for k, (p, _) in enumerate(sts)}
    for ref, j in da_lp.col.items():
        family, key = ref
        if family == "pda":
            p, s, t = key
            k = st_map[p]
            x_map[ref] = da_res.dispatch["p_da"][k, s, t]
            d_map[ref] = da_res.duals["nu6_lo"][k, s, t] - da_res.duals["nu6_hi"][k, s, t]
        elif family == "g":
            x_map[ref] = da_res.dispatch["g_da"][key]
            d_map[ref] = da_res.duals["nu7_lo"][key] - da_res.duals["nu7_hi"][key]
        elif family == "pl":
            x_map[ref] = da_res.dispatch["p_line"][key]
            d_map[ref] = da_res.duals["nu5_lo"][key] - da_res.duals["nu5_hi"][key]
        elif family == "q":
            n, k, t = key
            x_map[ref] = da_res.dispatch["q"][n][k, t]
            d_map[ref] = da_res.duals["nu2_lo"][n][k, t] - da_res.duals["nu2_hi"][n][k, t]
        elif family == "spill":
            x_map[ref] = da_res.dispatch["spill"][key]
            d_map[ref] = da_res.duals["nu4_lo"][key] - da_res.duals["nu4_hi"][key]
        else:
            x_map[ref] = da_res.dispatch["m"][key]
            d_map[ref] = da_res.duals["nu3_lo"][key] - da_res.duals["nu3_hi"][key]
    y_map = {}
    for ref in da_lp.row:
        family, key = ref
        if family == "bal":
            y_map[ref] = da_res.duals["lambda"][key]
        elif family == "hyd":
            y_map[ref] = da_res.duals["eta1"][key]
        else:
            y_map[ref] = da_res.duals["eta2"][key]
    return _embedded_lp_solution(da_lp.lp, da_lp.col, da_lp.row, x_map, y_map, d_map)


def _embedded_fc_solution(fc_lp, instance, fc_res, sts, ns):
    st_map = {p: k for k, (p, _) in enumerate(sts)}
    x_map, d_map = {}, {}
    for ref, j in fc_lp.col.items():
        family, key = ref
        if family == "pfc":
            p, s, t = key
            k = st_map[p]
            x_map[ref] = fc_res.dispatch["p_fc"][k, s, t]
            d_map[ref] = fc_res.duals["sigma_p"][k, s, t] - fc_res.duals["theta1"][k, s, t]
        else:
            x_map[ref] = fc_res.dispatch["g_fc"][key]
            d_map[ref] = fc_res.duals["sigma_g"][key]
    y_map = {}
    for ref in fc_lp.row:
        family, key = ref
        if family == "fbal":
            y_map[ref] = fc_res.duals["lambda_fc"][key[0]]
        elif family == "th6":
            y_map[ref] = fc_res.duals["theta6"][key]
        elif family == "th7":
            y_map[ref] = -fc_res.duals["theta7"][key]
        elif family == "th9":
            p, s, t = key
            y_map[ref] = -fc_res.duals["theta9"][st_map[p], s, t]
        else:
            y_map[ref] = -fc_res.duals["theta10"][key]
    return _embedded_lp_solution(fc_lp.lp, fc_lp.col, fc_lp.row, x_map, y_map, d_map)
