"""Reserve-market clearing: requirement arithmetic, table outcomes with a
fixed day-ahead result, coupling caps, and the duality identity."""
import numpy as np
import pytest

from hydrobid.cases import case_i, case_ii
from hydrobid.da import build_da_lp, clear_da
from hydrobid.fcrn import build_fcrn_lp, clear_fcrn, fcrn_kkt_residuals, fcrn_requirement
from hydrobid.model import BidCurve


def test_requirement_values():
    assert fcrn_requirement(100.0, 0.0, 4.0) == 0.0
    assert fcrn_requirement(100.0, 0.1, 4.0) == pytest.approx(5.0)
    assert fcrn_requirement(50.0, 0.2, 0.5) == pytest.approx(40.0)
    with pytest.raises(ValueError):
        fcrn_requirement(100.0, 0.1, 0.0)


def _cleared(level, case, da_price, da_vol, fc_price, fc_vol):
    ins, (scen,) = case(level, with_fcrn=True)
    da = clear_da(build_da_lp(ins, {"st": BidCurve("st", "da", [[da_price]], [[da_vol]])}, scen))
    assert da.status == "optimal"
    flp = build_fcrn_lp(ins, {"st": BidCurve("st", "fcrn", [[fc_price]], [[fc_vol]])}, da, scen)
    return da, flp, clear_fcrn(flp)


def test_high_demand_strategic_sets_reserve_cap():
    da, flp, fc = _cleared("H", case_i, 200.0, 25.0, 100.0, 25.0)
    assert da.dispatch["p_da"][0, 0, 0] == pytest.approx(20.0)
    assert fc.dispatch["p_fc"][0, 0, 0] == pytest.approx(20.0)
    assert fc.dispatch["g_fc"][:, 0] == pytest.approx([0.0, 0.0])
    assert fc.prices[0] == pytest.approx(100.0)
    rep = fcrn_kkt_residuals(flp, fc)
    assert rep.max_violation() <= 1e-6
    assert rep.details["strong_duality_gap"] <= 1e-6


def test_case_ii_low_demand_with_reserve():
    # day-ahead (24, 10, 0) leaves the non-strategic unit coupled at 10; a
    # whiff of water value breaks the zero-cost tie so the dispatch is unique
    ins, (scen,) = case_ii("L", with_fcrn=True)
    scen.future_price = 0.001
    da = clear_da(build_da_lp(ins, {"st": BidCurve("st", "da", [[0.0]], [[24.0]])}, scen))
    assert da.dispatch["p_da"][0, 0, 0] == pytest.approx(24.0)
    flp = build_fcrn_lp(ins, {"st": BidCurve("st", "fcrn", [[100.0]], [[15.0]])}, da, scen)
    fc = clear_fcrn(flp)
    assert fc.dispatch["p_fc"][0, 0, 0] == pytest.approx(10.0)
    assert fc.dispatch["g_fc"][0, 0] == pytest.approx(10.0)
    assert fc.prices[0] == pytest.approx(100.0)


def test_case_ii_medium_undercut_clears_at_thermal_reserve_cost():
    da, flp, fc = _cleared("M", case_ii, 200.0, 35.0, 29.99, 20.0)
    assert fc.dispatch["p_fc"][0, 0, 0] == pytest.approx(20.0)
    assert fc.prices[0] == pytest.approx(29.99)


def test_single_provider_price():
    # zero the strategic offer and leave thermal 20 MW of coupled headroom:
    # it covers the reserve alone at its cost
    ins, (scen,) = case_i("M", with_fcrn=True)
    da = clear_da(build_da_lp(ins, {"st": BidCurve("st", "da", [[15.0]], [[70.0]])}, scen))
    assert da.dispatch["g_da"][1, 0] == pytest.approx(20.0)
    flp = build_fcrn_lp(ins, {"st": BidCurve("st", "fcrn", [[100.0]], [[0.0]])}, da, scen)
    fc = clear_fcrn(flp)
    assert fc.dispatch["g_fc"][1, 0] == pytest.approx(20.0)
    assert fc.prices[0] == pytest.approx(30.0)


def test_zero_demand_zero_price():
    ins, (scen,) = case_i("M", with_fcrn=True)
    scen.demand_fc[:] = 0.0
    da = clear_da(build_da_lp(ins, {"st": BidCurve("st", "da", [[15.0]], [[90.0]])}, scen))
    flp = build_fcrn_lp(ins, {"st": BidCurve("st", "fcrn", [[100.0]], [[5.0]])}, da, scen)
    fc = clear_fcrn(flp)
    assert np.allclose(fc.dispatch["p_fc"], 0.0)
    assert np.allclose(fc.dispatch["g_fc"], 0.0)


def test_headroom_invariant_and_sequential_purity():
    ins, (scen,) = case_i("M", with_fcrn=True)
    da = clear_da(build_da_lp(ins, {"st": BidCurve("st", "da", [[15.0]], [[85.0]])}, scen))
    before = da.dispatch["g_da"].copy()
    ns_caps = (50.0, 100.0)
    for vol in (0.0, 10.0, 15.0):
        flp = build_fcrn_lp(ins, {"st": BidCurve("st", "fcrn", [[100.0]], [[vol]])}, da, scen)
        fc = clear_fcrn(flp)
        if fc.status != "optimal":
            continue
        for u, cap in enumerate(ns_caps):
            assert fc.dispatch["g_fc"][u, 0] + da.dispatch["g_da"][u, 0] <= cap + 1e-9
    assert np.array_equal(before, da.dispatch["g_da"])  # reserve runs never touch the energy result


def test_missing_da_fields_rejected():
    ins, (scen,) = case_i("M", with_fcrn=True)
    da = clear_da(build_da_lp(ins, {"st": BidCurve("st", "da", [[15.0]], [[85.0]])}, scen))
    del da.dispatch["g_da"]
    with pytest.raises(ValueError, match="lacks"):
        build_fcrn_lp(ins, {"st": BidCurve("st", "fcrn", [[100.0]], [[15.0]])}, da, scen)


def test_one_variable_analytic_reserve_lp():
    # single provider, cost 50, demand 20: price 50, dispatch 20, all
    # residuals zero in closed form
    import scipy.sparse as sp

    from hydrobid.da import generic_kkt_residuals
    from hydrobid.lp import LinearProgram, solve_lp

    lp = LinearProgram("min", np.array([50.0]), sp.csr_matrix([[1.0]]), [20.0], [20.0], [0.0], [np.inf])
    sol = solve_lp(lp)
    assert sol.x[0] == pytest.approx(20.0)
    assert sol.y[0] == pytest.approx(50.0)
    assert generic_kkt_residuals(lp, sol).max_violation() <= 1e-12


def test_perturbed_dual_detected():
    da, flp, fc = _cleared("H", case_i, 200.0, 25.0, 100.0, 25.0)
    fc.solution.y[0] -= 2.0
    assert fcrn_kkt_residuals(flp, fc).stationarity >= 2.0 - 1e-9


def test_droop_floor_rows_bind_under_frequency_deviation():
    # both mandated units need day-ahead dispatch AND headroom; the demand
    # split below leaves the non-strategic hydro at 45/50 and thermal at 10
    ins, (scen,) = case_i("M", with_fcrn=True)
    # discharge-limited hydro: 40 MW of water behind a 50 MW governor keeps
    # headroom available even when the unit runs flat out
    ins.hydro_plants[1].segments = [(1.0, 0.0, 40.0)]
    scen.freq_dev[:] = 0.1
    scen.demand_da[:, 0] = (40.0, 40.0, 40.0)
    scen.demand_fc[:] = 10.0
    da = clear_da(build_da_lp(ins, {"st": BidCurve("st", "da", [[0.0]], [[65.0]])}, scen))
    assert da.dispatch["g_da"][:, 0] == pytest.approx([40.0, 15.0])
    flp = build_fcrn_lp(ins, {"st": BidCurve("st", "fcrn", [[100.0]], [[20.0]])}, da, scen)
    fc = clear_fcrn(flp)
    assert fc.status == "optimal"
    for u, cap in enumerate((50.0, 100.0)):
        req = fcrn_requirement(cap, 0.1, 4.0)
        assert fc.dispatch["g_fc"][u, 0] >= req - 1e-9
