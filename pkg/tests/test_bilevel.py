"""The single-level MILP: envelope algebra, upper-level constraint block,
study-table reproduction, reformulation verification and the brute-force
bid-grid oracle on a toy."""
import numpy as np
import pytest

from hydrobid.bilevel import (
    BigMConfig,
    build_single_level_milp,
    build_upper_constraints,
    extract_bids,
    mccormick_envelope,
    solve_bilevel,
    verify_reformulation,
)
from hydrobid.cases import case_i, case_ii, case_iii
from hydrobid.da import build_da_lp, clear_da
from hydrobid.fcrn import build_fcrn_lp, clear_fcrn
from hydrobid.model import BidBounds, BidCurve


def envelope_value(rows, x, y):
    """Feasible interval for E at a point (x, y)."""
    lo, hi = -np.inf, np.inf
    for cx, cy, ce, rhs in rows:
        # cx*x + cy*y + ce*E <= rhs
        bound = rhs - cx * x - cy * y
        if ce > 0:
            hi = min(hi, bound / ce)
        else:
            lo = max(lo, -bound)
    return lo, hi


def test_mccormick_exact_at_bounds():
    rows = mccormick_envelope((0.0, 1.0), (0.0, 1.0))
    lo, hi = envelope_value(rows, 1.0, 0.3)
    assert lo == pytest.approx(0.3) and hi == pytest.approx(0.3)
    rows = mccormick_envelope((0.0, 80.0), (0.0, 500.0))
    lo, hi = envelope_value(rows, 0.0, 123.0)
    assert lo == pytest.approx(0.0) and hi == pytest.approx(0.0)


def test_mccormick_interior_relaxation_contains_product():
    rows = mccormick_envelope((0.0, 1.0), (0.0, 1.0))
    lo, hi = envelope_value(rows, 0.5, 0.5)
    assert lo == pytest.approx(0.0) and hi == pytest.approx(0.5)
    assert lo - 1e-12 <= 0.25 <= hi + 1e-12


def test_mccormick_rejects_unbounded_box():
    with pytest.raises(ValueError):
        mccormick_envelope((0.0, np.inf), (0.0, 1.0))


def test_mccormick_random_soundness_and_bound_exactness():
    rng = np.random.default_rng(2)
    for _ in range(50):
        xb = np.sort(rng.uniform(-5, 5, 2))
        yb = np.sort(rng.uniform(-5, 5, 2))
        rows = mccormick_envelope(xb, yb)
        x = rng.uniform(*xb)
        y = rng.uniform(*yb)
        lo, hi = envelope_value(rows, x, y)
        assert lo - 1e-9 <= x * y <= hi + 1e-9
        lo, hi = envelope_value(rows, xb[0], y)
        assert hi - lo <= 1e-9  # exact when a factor sits on its bound


def test_upper_block_contains_documented_rows():
    ins, scens = case_iii()
    rows = build_upper_constraints(ins, scens)
    names = [r[0] for r in rows]
    assert any(n.startswith("prodbal") for n in names)
    assert any(n.startswith("env_hi") for n in names)
    assert any(n.startswith("st_droop") for n in names)
    # intraday buy of 30 MW fits the envelope: env_hi has the -1 buy coef
    row = next(r for r in rows if r[0].startswith("env_hi"))
    assert row[1][("idm", 0, 0, 0)] == -1.0


def test_upper_block_zero_reserve_collapses_envelopes():
    ins, scens = case_i("M", with_fcrn=False)
    rows = build_upper_constraints(ins, scens)
    hi_row = next(r for r in rows if r[0].startswith("env_hi"))
    lo_row = next(r for r in rows if r[0].startswith("env_lo"))
    assert not any(ref[0] == "vfc" for ref in hi_row[1])
    assert hi_row[3] == 100.0 and lo_row[2] == 0.0


def test_empty_strategic_set_rejected():
    ins, scens = case_i("M")
    for p in ins.hydro_plants:
        p.strategic = False
    with pytest.raises(ValueError, match="no strategic unit"):
        build_upper_constraints(ins, scens)


def test_infeasible_bid_bounds_detected_before_solve():
    ins, scens = case_i("M")
    ins.num_segments = 2
    bb = BidBounds.uniform(2, 1, 0.0, 200.0, 0.0, 100.0)
    bb.da_min[0, 0] = 150.0
    bb.da_max[1, 0] = 100.0  # monotone curve cannot exist: floor above cap
    ins.bid_bounds["st"] = bb
    with pytest.raises(ValueError, match="monotone"):
        build_upper_constraints(ins, scens)


def test_bigm_below_price_cap_rejected():
    ins, scens = case_i("M")
    with pytest.raises(ValueError, match="slice off"):
        build_single_level_milp(ins, scens, BigMConfig(price_cap_da=50.0))
    with pytest.raises(ValueError, match="slice off"):
        build_single_level_milp(ins, scens, BigMConfig(m17=10.0))


TABLE_I = {
    ("L", False): ((0, 34, 0), None, 0, None),
    ("M", False): ((90, 50, 0), None, 15, None),
    ("H", False): ((20, 50, 100), None, 200, None),
    ("L", True): ((34, 0, 0), (20, 0, 0), 0, 100),
    ("M", True): ((85, 50, 5), (15, 0, 5), 15, 100),
    ("H", True): ((20, 50, 100), (20, 0, 0), 200, 100),
}


@pytest.mark.parametrize("level,with_fc", list(TABLE_I))
def test_case_i_rows_match_study_table(level, with_fc):
    gen, fc_gen, lam, lam_fc = TABLE_I[(level, with_fc)]
    ins, scens = case_i(level, with_fcrn=with_fc)
    sol = solve_bilevel(ins, scens)
    r = sol.da_results[0]
    got = (r.dispatch["p_da"][0, 0, 0], r.dispatch["g_da"][0, 0], r.dispatch["g_da"][1, 0])
    assert got == pytest.approx(gen, abs=1e-4)
    assert sol.prices_da[0][:, 0] == pytest.approx([lam] * 3, abs=1e-4)
    if with_fc:
        f = sol.fc_results[0]
        fgot = (f.dispatch["p_fc"][0, 0, 0], f.dispatch["g_fc"][0, 0], f.dispatch["g_fc"][1, 0])
        assert fgot == pytest.approx(fc_gen, abs=1e-4)
        assert sol.prices_fc[0][0] == pytest.approx(lam_fc, abs=1e-4)
    assert verify_reformulation(ins, scens, sol).passed


def test_zero_demand_keeps_initial_water_value():
    ins, scens = case_i("M", with_fcrn=False)
    scens[0].demand_da[:, :] = 0.0
    scens[0].future_price = 2.0
    sol = solve_bilevel(ins, scens)
    # nothing trades; the objective is the stored-water value of the
    # strategic reservoir: 1e5 m3 * 2 EUR * 0.9
    assert sol.objective == pytest.approx(1e5 * 2.0 * 0.9, rel=1e-9)
    assert sol.decomposition["da_revenue"] == pytest.approx(0.0, abs=1e-6)


def test_reformulation_report_fails_on_tampered_solution():
    ins, scens = case_i("M", with_fcrn=True)
    sol = solve_bilevel(ins, scens)
    assert verify_reformulation(ins, scens, sol).passed
    sol.da_results[0].dispatch["p_da"][0, 0, 0] -= 7.0  # break primal optimality
    rep = verify_reformulation(ins, scens, sol)
    assert not rep.passed


def test_extract_bids_monotone_and_within_bounds():
    ins, scens = case_i("H", with_fcrn=True)
    sol = solve_bilevel(ins, scens)
    curves = extract_bids(sol)["st"]
    da, fc = curves["da"], curves["fcrn"]
    assert da.is_monotone() and fc.is_monotone()
    bb = ins.bid_bounds["st"]
    assert (da.prices >= bb.da_min - 1e-9).all() and (da.prices <= bb.da_max + 1e-9).all()
    # high demand: the cleared step offers 20 MW at the 200 cap
    assert da.prices[0, 0] == pytest.approx(200.0, abs=1e-6)
    assert sol.da_results[0].dispatch["p_da"][0, 0, 0] == pytest.approx(20.0, abs=1e-6)


def test_complementarity_products_small_at_solution():
    ins, scens = case_ii("M", with_fcrn=True)
    sol = solve_bilevel(ins, scens)
    x = sol.milp.x
    prog = sol.program
    lp = prog.mip.lp
    act = lp.a @ x
    for entry in prog.compl:
        dual = x[entry.dual_col]
        assert dual <= entry.m_dual * (1 - 1e-4) + 1e-9
    # every complementarity row pair holds: recompute slack * dual directly
    rep = verify_reformulation(ins, scens, sol)
    assert rep.complementarity <= 1e-6 * (1 + abs(sol.objective))


def test_objective_decomposition_identity():
    ins, scens = case_iii()
    sol = solve_bilevel(ins, scens)
    total = sum(sol.decomposition.values())
    assert total == pytest.approx(sol.objective_bilinear, rel=1e-12)
    assert abs(sol.objective - sol.objective_bilinear) <= 1e-5 * (1 + abs(sol.objective))


def grid_oracle(ins, scens, da_prices, da_vols, fc_prices=(), fc_vols=()):
    """Brute force over candidate bid grids, clearing both markets per
    candidate; prices are read from a demand-bumped re-solve so degenerate
    duals price the next megawatt like the optimistic model does."""
    scen = scens[0]
    cfg = BigMConfig().resolved(ins, scens)
    best = -np.inf
    st = ins.strategic[0]
    eps = 1e-4
    for bp in da_prices:
        for bv in da_vols:
            for fp in fc_prices or (None,):
                for fv in fc_vols or (None,):
                    if fp is not None and bv + fv > st.p_max + 1e-9:
                        continue
                    da_bid = {st.name: BidCurve(st.name, "da", [[bp]], [[bv]])}
                    res = clear_da(build_da_lp(ins, da_bid, scen))
                    if res.status != "optimal":
                        continue
                    bump = scen.demand_da.copy()
                    scen.demand_da = bump + eps / ins.topology.node_count
                    res_up = clear_da(build_da_lp(ins, da_bid, scen))
                    scen.demand_da = bump
                    if res_up.status != "optimal":
                        lam = np.full_like(res.prices, cfg.price_cap_da)
                    else:
                        lam = np.minimum(res_up.prices, cfg.price_cap_da)
                    node = st.node
                    revenue = float(np.sum(res.dispatch["p_da"][0] * lam[node]))
                    if fp is not None:
                        fc_bid = {st.name: BidCurve(st.name, "fcrn", [[fp]], [[fv]])}
                        fres = clear_fcrn(build_fcrn_lp(ins, fc_bid, res, scen))
                        if fres.status != "optimal":
                            continue
                        dfc = scen.demand_fc.copy()
                        scen.demand_fc = dfc + eps
                        fres_up = clear_fcrn(build_fcrn_lp(ins, fc_bid, res, scen))
                        scen.demand_fc = dfc
                        if fres_up.status != "optimal":
                            lam_fc = np.full(ins.horizon, cfg.price_cap_fc)
                        else:
                            lam_fc = np.minimum(fres_up.prices, cfg.price_cap_fc)
                        revenue += float(np.sum(fres.dispatch["p_fc"][0] * lam_fc))
                    best = max(best, revenue)
    return best


def test_milp_matches_bid_grid_enumeration_on_toy():
    ins, scens = case_i("M", with_fcrn=False)
    sol = solve_bilevel(ins, scens)
    demands = scens[0].demand_da.sum()
    da_prices = (0.0, 15.0, 200.0)
    da_vols = (0.0, 40.0, demands - 50.0, demands - 50.0 - 100.0 + 100.0, 100.0)
    best = grid_oracle(ins, scens, da_prices, da_vols)
    assert sol.objective_bilinear == pytest.approx(best, rel=1e-5)
