"""Day-ahead clearing against the three-bus study outcomes, KKT residuals
with an analytic one-variable oracle, and the strong-duality identity."""
import numpy as np
import pytest

from hydrobid.cases import case_i, case_ii
from hydrobid.da import build_da_lp, clear_da, kkt_residuals, strong_duality_gap
from hydrobid.model import BidCurve, NetworkTopology


def da_bid(price, volume):
    return {"st": BidCurve("st", "da", [[price]], [[volume]])}


def test_low_demand_clears_nonstrategic_at_zero():
    ins, (scen,) = case_i("L", with_fcrn=False)
    res = clear_da(build_da_lp(ins, da_bid(0.0, 0.0), scen))
    assert res.status == "optimal"
    assert res.dispatch["g_da"][:, 0] == pytest.approx([34.0, 0.0])
    assert res.prices[:, 0] == pytest.approx([0.0, 0.0, 0.0])


def test_medium_demand_strategic_at_thermal_cost():
    ins, (scen,) = case_i("M", with_fcrn=False)
    res = clear_da(build_da_lp(ins, da_bid(15.0, 90.0), scen))
    assert res.dispatch["p_da"][0, 0, 0] == pytest.approx(90.0)
    assert res.dispatch["g_da"][:, 0] == pytest.approx([50.0, 0.0])
    assert res.prices[0, 0] == pytest.approx(15.0)


def test_high_demand_reaches_price_cap():
    ins, (scen,) = case_i("H", with_fcrn=False)
    res = clear_da(build_da_lp(ins, da_bid(200.0, 25.0), scen))
    assert res.dispatch["p_da"][0, 0, 0] == pytest.approx(20.0)
    assert res.dispatch["g_da"][:, 0] == pytest.approx([50.0, 100.0])
    assert res.prices[:, 0] == pytest.approx([200.0, 200.0, 200.0])


def test_congestion_splits_nodal_prices():
    ins, (scen,) = case_ii("M", with_fcrn=False)
    res = clear_da(build_da_lp(ins, da_bid(200.0, 35.0), scen))
    assert res.dispatch["p_da"][0, 0, 0] == pytest.approx(30.0)
    assert res.dispatch["g_da"][:, 0] == pytest.approx([50.0, 60.0])
    assert res.prices[:, 0] == pytest.approx([200.0, 15.0, 15.0])
    assert abs(res.dispatch["p_line"][0, 0]) == pytest.approx(20.0)  # at ntc


def test_zero_demand_zero_dispatch():
    ins, (scen,) = case_i("L", with_fcrn=False)
    scen.demand_da[:, :] = 0.0
    scen.inflow[:, :] = 0.0
    res = clear_da(build_da_lp(ins, da_bid(0.0, 10.0), scen))
    assert res.status == "optimal"
    assert res.objective == pytest.approx(0.0)  # no water value priced here
    assert np.allclose(res.dispatch["g_da"], 0.0)


def test_disconnected_demand_infeasible():
    ins, (scen,) = case_ii("M", with_fcrn=False)
    ins.topology = NetworkTopology(3, [(0, 1, 0.0), (1, 2, 0.0)])
    scen.demand_da[:, 0] = (0.0, 0.0, 150.0)  # only thermal's bus, cap 100
    res = clear_da(build_da_lp(ins, da_bid(0.0, 100.0), scen))
    assert res.status == "infeasible"


def test_unknown_unit_and_bad_shape_rejected():
    ins, (scen,) = case_i("M")
    with pytest.raises(ValueError, match="unknown strategic unit"):
        build_da_lp(ins, {"nope": BidCurve("nope", "da", [[1.0]], [[1.0]])}, scen)
    with pytest.raises(ValueError, match="shape"):
        build_da_lp(ins, {"st": BidCurve("st", "da", [[1.0], [2.0]], [[1.0], [1.0]])}, scen)


def test_non_monotone_bid_rejected():
    ins, (scen,) = case_i("M")
    ins.num_segments = 2
    from hydrobid.model import BidBounds

    ins.bid_bounds["st"] = BidBounds.uniform(2, 1, 0.0, 200.0, 0.0, 100.0)
    with pytest.raises(ValueError, match="monotone"):
        build_da_lp(ins, {"st": BidCurve("st", "da", [[20.0], [10.0]], [[5.0], [5.0]])}, scen)


def test_kkt_residuals_zero_at_optimum_and_detect_perturbation():
    ins, (scen,) = case_i("M", with_fcrn=False)
    lp = build_da_lp(ins, da_bid(15.0, 90.0), scen)
    res = clear_da(lp)
    rep = kkt_residuals(lp, res)
    assert rep.max_violation() <= 1e-6
    res.solution.y[0] += 1.0
    rep2 = kkt_residuals(lp, res)
    assert rep2.stationarity >= 1.0 - 1e-9


def test_one_variable_analytic_kkt():
    # min c x st x >= d: optimum x = d, row dual c, zero residuals by hand
    import scipy.sparse as sp

    from hydrobid.da import generic_kkt_residuals
    from hydrobid.lp import LinearProgram, solve_lp

    lp = LinearProgram("min", np.array([3.0]), sp.csr_matrix([[1.0]]), [2.0], [np.inf], [0.0], [np.inf])
    sol = solve_lp(lp)
    assert sol.x[0] == pytest.approx(2.0)
    assert sol.y[0] == pytest.approx(3.0)
    assert generic_kkt_residuals(lp, sol).max_violation() <= 1e-12


def test_strong_duality_gap_zero_and_scale_free():
    for level in ("L", "M", "H"):
        ins, (scen,) = case_i(level, with_fcrn=False)
        bid = {"L": (0.0, 0.0), "M": (15.0, 90.0), "H": (200.0, 25.0)}[level]
        lp = build_da_lp(ins, da_bid(*bid), scen)
        res = clear_da(lp)
        assert strong_duality_gap(lp, res) <= 1e-6
        scen.demand_da *= 2.0
        if level == "H":
            continue  # doubled high demand exceeds capacity
        lp2 = build_da_lp(ins, da_bid(bid[0], bid[1] * 2), scen)
        res2 = clear_da(lp2)
        assert strong_duality_gap(lp2, res2) <= 1e-6


def test_suboptimal_point_shows_its_optimality_gap():
    # a feasible point costing delta more than the optimum shows a duality
    # gap of exactly delta against the optimal dual assembly
    ins, (scen,) = case_i("M", with_fcrn=False)
    lp = build_da_lp(ins, da_bid(15.0, 90.0), scen)
    res = clear_da(lp)
    from hydrobid.da import dual_objective_named

    delta = 120.0
    gap = abs((res.objective + delta) - dual_objective_named(lp.lp, res.solution))
    assert gap == pytest.approx(delta, abs=1e-6)


def test_merit_order_price_plateaus_via_clearing():
    # sweep total demand with a fixed competitive bid stack: price is 0 below
    # 50, 15 up to 150, 200 above (capacity 250 caps the sweep)
    ins, (scen,) = case_i("M", with_fcrn=False)
    for total, lam in ((30.0, 0.0), (100.0, 15.0), (160.0, 200.0), (240.0, 200.0)):
        scen.demand_da[:, 0] = (total * 0.3, total * 0.3, total * 0.4)
        res = clear_da(build_da_lp(ins, da_bid(200.0, 100.0), scen))
        # strategic bids at cap with spare volume; marginal unit sets price
        expect = 0.0 if total < 50 else (15.0 if total <= 150 else 200.0)
        assert res.prices[0, 0] == pytest.approx(expect), total


def test_hydro_mass_balance_holds_with_delays():
    ins, (scen,) = case_i("M", with_fcrn=False)
    # couple the two stations with a one-period delay and rerun
    ins.cascade.upstream[1, 0] = 1.0
    ins.cascade.tau = np.array([1, 0])
    ins.cascade = type(ins.cascade).from_upstream(ins.cascade.upstream, ins.cascade.tau)
    ins.horizon = 3
    ins.bid_bounds["st"] = type(ins.bid_bounds["st"]).uniform(1, 3, 0.0, 200.0, 0.0, 100.0)
    scen2 = _stretch_scenario(ins, scen, 3)
    lp = build_da_lp(ins, {"st": BidCurve("st", "da", [[15.0] * 3], [[90.0] * 3])}, scen2)
    res = clear_da(lp)
    assert res.status == "optimal"
    m, q, s = res.dispatch["m"], res.dispatch["q"], res.dispatch["spill"]
    for n in range(2):
        for t in range(3):
            prev = m[n, t - 1] if t else scen2.initial_content[n]
            upstream = 0.0
            if n == 1:
                ts = t - 1
                if ts >= 0:
                    upstream = q[0][:, ts].sum() + s[0, ts]
                else:
                    upstream = ins.hydro_plants[0].hist_release
            lhs = m[n, t] - prev + q[n][:, t].sum() + s[n, t] - scen2.inflow[n, t] - upstream
            assert abs(lhs) <= 1e-7


def _stretch_scenario(ins, scen, nt):
    from hydrobid.model import Scenario

    return Scenario(
        probability=1.0,
        inflow=np.tile(scen.inflow[:, :1], (1, nt)),
        initial_content=scen.initial_content,
        demand_da=np.tile(scen.demand_da[:, :1], (1, nt)),
        demand_fc=np.tile(scen.demand_fc[:1], nt),
        cost_fc=np.tile(scen.cost_fc[:, :1], (1, nt)),
        id_price_up=np.tile(scen.id_price_up[:, :1], (1, nt)),
        id_price_down=np.tile(scen.id_price_down[:, :1], (1, nt)),
        future_price=scen.future_price,
        future_mu=scen.future_mu,
        freq_dev=np.zeros(nt),
    )


def test_inequality_duals_are_nonnegative():
    ins, (scen,) = case_ii("H", with_fcrn=False)
    lp = build_da_lp(ins, da_bid(200.0, 35.0), scen)
    res = clear_da(lp)
    for name, val in res.duals.items():
        if name.startswith("nu"):
            arrays = val if isinstance(val, list) else [val]
            for arr in arrays:
                assert (arr >= -1e-9).all(), name
