"""Bundled study instances: three-bus illustrations, the three-period water
value study, the 24-period market power study and a 118-bus system.

Demand levels and production equivalents of the smaller studies are
calibrated so the documented clearing outcomes are unique optima; the
118-bus layout is synthetic (deterministically generated) with the unit
role split 14 non-strategic hydro / 1 strategic hydro / 4 thermal.
"""
from __future__ import annotations

import numpy as np

from .model import (
    BidBounds,
    HydroCascade,
    HydroPlant,
    MarketInstance,
    NetworkTopology,
    Scenario,
    ThermalUnit,
)

BIG_RESERVOIR = 1.0e6
DA_CAP = 200.0
FC_CAP = 100.0


def _three_bus(line_caps, include_fcrn, nt, st_kwargs=None, nst_kwargs=None, th_cost=15.0, nb=1):
    st = dict(
        name="st",
        node=0,
        segments=[(1.0, 0.0, 1000.0)],
        reservoir_min=0.0,
        reservoir_max=BIG_RESERVOIR,
        spill_min=0.0,
        spill_max=BIG_RESERVOIR,
        p_max=100.0,
        droop=4.0,
        strategic=True,
    )
    st.update(st_kwargs or {})
    nst = dict(
        name="nst",
        node=1,
        segments=[(1.0, 0.0, 1000.0)],
        reservoir_min=0.0,
        reservoir_max=BIG_RESERVOIR,
        spill_min=0.0,
        spill_max=BIG_RESERVOIR,
        p_max=50.0,
        droop=4.0,
        strategic=False,
    )
    nst.update(nst_kwargs or {})
    plants = [HydroPlant(**st), HydroPlant(**nst)]
    thermal = [ThermalUnit(name="th", node=2, p_max=100.0, cost_da=th_cost)]
    topo = NetworkTopology(3, [(0, 1, line_caps[0]), (1, 2, line_caps[1])])
    cascade = HydroCascade.from_upstream(np.zeros((2, 2)), np.zeros(2, dtype=int))
    bounds = {"st": BidBounds.uniform(nb, nt, 0.0, DA_CAP, 0.0, FC_CAP)}
    return MarketInstance(
        topology=topo,
        hydro_plants=plants,
        thermal_units=thermal,
        cascade=cascade,
        bid_bounds=bounds,
        horizon=nt,
        num_segments=nb,
        include_fcrn=include_fcrn,
    )


def _flat_scenario(instance, flat_demand, demand_fc, cost_fc_by_unit, **kw):
    nt = instance.horizon
    nn = instance.topology.node_count
    nh = len(instance.hydro_plants)
    nu = len(instance.units)
    dem = np.zeros((nn, nt))
    for node, val in enumerate(flat_demand):
        dem[node, :] = val
    cfc = np.zeros((nu, nt))
    for u, val in enumerate(cost_fc_by_unit):
        cfc[u, :] = val
    defaults = dict(
        probability=1.0,
        inflow=np.zeros((nh, nt)),
        initial_content=np.full(nh, 1.0e5),
        demand_da=dem,
        demand_fc=np.full(nt, float(demand_fc)),
        cost_fc=cfc,
        id_price_up=np.zeros((nn, nt)),
        id_price_down=np.zeros((nn, nt)),
        future_price=0.0,
        future_mu=np.full(nh, 0.9),
        freq_dev=np.zeros(nt),
    )
    defaults.update(kw)
    return Scenario(**defaults)


DEMAND_LEVELS = {"L": (4.0, 5.0, 25.0), "M": (50.0, 50.0, 40.0), "H": (50.0, 50.0, 70.0)}


def case_i(level: str = "M", with_fcrn: bool = True):
    """Three units without network limits; Case I of the study tables."""
    ins = _three_bus((1000.0, 1000.0), with_fcrn, nt=1)
    ins.name = f"case-i-{level}-{'fc' if with_fcrn else 'nofc'}"
    scen = _flat_scenario(ins, DEMAND_LEVELS[level], 20.0 if with_fcrn else 0.0, (0.0, 30.0, 30.0))
    return ins, [scen]


def case_ii(level: str = "M", with_fcrn: bool = True):
    """Same system with line 1 limited to 20 MW."""
    ins = _three_bus((20.0, 100.0), with_fcrn, nt=1)
    ins.name = f"case-ii-{level}-{'fc' if with_fcrn else 'nofc'}"
    scen = _flat_scenario(ins, DEMAND_LEVELS[level], 20.0 if with_fcrn else 0.0, (0.0, 30.0, 30.0))
    return ins, [scen]


def case_iii():
    """Three periods with valued stored water and intraday trading.

    Stored water is priced at 26 * 0.9 = 23.4 EUR/m3; the non-strategic
    unit's production equivalent 0.117 turns that into a 200 EUR/MWh
    opportunity cost, so it never undercuts the strategic cap.  Its 120 MW
    governor capacity against only 60 MW of dischargeable energy keeps its
    reserve headroom min(g, 120 - g) at 20 MW or more whenever it runs, so
    the strategic player can neither starve nor flood that headroom away.
    The reservoirs are deliberately uncoupled: with a one-sided water
    valuation the operator (or the strategic owner) of a coupled pair
    could profitably shuffle the other party's water, which the clearing
    optimality conditions cannot support.

    Demand totals (170, 265, 340) against the 200 MW thermal unit produce
    the documented behaviour: step 1 has thermal slack in both markets
    (prices 48/50) and a cheap intraday price worth buying the full 30 MW
    cap; step 2 exhausts thermal, prices hit both caps (200/100) and the
    offer envelope leaves exactly 15 MW to sell intraday; step 3 activates
    the non-strategic unit whose reserve slack pins the reserve price back
    to 50.
    """
    nt = 3
    ins = _three_bus(
        (200.0, 200.0),
        True,
        nt=nt,
        st_kwargs=dict(segments=[(1.0, 0.0, 500.0)], id_volume_cap=30.0),
        # opportunity cost 23.4 / mu sits a hair above the 200 cap: the
        # operator is never indifferent about dispatching this unit, so the
        # strategic player cannot shuffle load onto it for free
        nst_kwargs=dict(segments=[(0.11699999, 0.0, 60.0 / 0.11699999)], p_max=120.0),
        th_cost=48.0,
    )
    ins.thermal_units[0].p_max = 200.0
    ins.name = "case-iii"
    dem = np.zeros((3, nt))
    dem[:, 0] = (57.0, 57.0, 56.0)
    dem[:, 1] = (89.0, 88.0, 88.0)
    dem[:, 2] = (114.0, 113.0, 113.0)
    idu = np.zeros((3, nt))
    idd = np.zeros((3, nt))
    idu[:, :] = (45.0, 60.0, 24.0)  # selling price per period, all buses
    idd[:, :] = (20.0, 62.0, 30.0)  # buying price per period
    scen = _flat_scenario(
        ins,
        (0.0, 0.0, 0.0),
        20.0,
        (0.0, 50.0, 50.0),
        demand_da=dem,
        inflow=np.array([[10.0] * nt, [20.0] * nt]),
        initial_content=np.array([300.0, 300.0]),
        id_price_up=idu,
        id_price_down=idd,
        future_price=26.0,
        future_mu=np.array([0.9, 0.9]),
    )
    return ins, [scen]


def case_iv():
    """24 periods, line congestion and intraday price swings; water value 20.

    Intraday prices are below the strategic unit's water value in steps 3-5
    (cheap, worth buying) and above it in steps 11-13 (worth selling); the
    direction of the optimal trades is the documented behaviour.
    """
    nt = 24
    ins = _three_bus(
        (20.0, 100.0),
        True,
        nt=nt,
        st_kwargs=dict(segments=[(1.0, 0.0, 500.0)], id_volume_cap=20.0),
        nst_kwargs=dict(segments=[(0.9, 0.0, 500.0)]),
        th_cost=15.0,
    )
    ins.name = "case-iv"
    base = np.array(
        [90, 85, 80, 78, 80, 95, 115, 130, 128, 115, 100, 90, 88, 95, 105, 115, 125, 135, 130, 118, 108, 100, 95, 90],
        dtype=float,
    )
    dem = np.zeros((3, nt))
    for node, share in enumerate((0.36, 0.33, 0.31)):
        dem[node, :] = np.round(base * share, 1)
    # strategic marginal water value is 20 * 0.9 = 18 EUR/MWh
    idu = np.full((3, nt), 10.0)
    idd = np.full((3, nt), 25.0)
    idu[:, 10:13] = 40.0  # steps 11-13: selling price above water value
    idd[:, 2:5] = 6.0  # steps 3-5: buying price below water value
    scen = _flat_scenario(
        ins,
        (0.0, 0.0, 0.0),
        15.0,
        (0.0, 30.0, 30.0),
        demand_da=dem,
        inflow=np.array([[30.0] * nt, [40.0] * nt]),
        initial_content=np.array([2000.0, 2000.0]),
        id_price_up=idu,
        id_price_down=idd,
        future_price=20.0,
        future_mu=np.array([0.9, 0.9]),
    )
    return ins, [scen]


def case_v(num_scenarios: int = 20, horizon: int = 24, seed: int = 118):
    """Synthetic 118-bus system: 186 lines, 4242 MW load, 4377 MW of
    generation in 18 buses (14 non-strategic hydro, 1 strategic, 4 thermal).

    The bus layout and unit placement are deterministic from the seed; the
    real network's data is not bundled, so this fixture documents its own
    mapping.
    """
    rng = np.random.default_rng(seed)
    nn, nl = 118, 186
    lines = [(i, i + 1, 1500.0) for i in range(nn - 1)]  # backbone path
    extra = nl - len(lines)
    seen = {(u, v) for u, v, _ in lines}
    while extra > 0:
        u = int(rng.integers(0, nn - 2))
        v = int(u + rng.integers(2, min(12, nn - u)))
        if v >= nn or (u, v) in seen:
            continue
        seen.add((u, v))
        lines.append((u, v, float(rng.choice([400.0, 600.0, 1000.0]))))
        extra -= 1
    topo = NetworkTopology(nn, lines)

    gen_buses = sorted(int(b) for b in rng.choice(nn, size=18, replace=False))
    # one strategic hydro, 14 non-strategic hydro, 4 thermal; two units share
    # the first generator bus so 19 units sit in 18 buses; 4377 MW in total
    caps_h = np.array([400.0] + [160.0] * 14)
    caps_t = np.array([450.0, 440.0, 430.0, 417.0])
    assert caps_h.sum() + caps_t.sum() == 4377.0
    plants = []
    plants.append(
        HydroPlant(
            name="st",
            node=gen_buses[0],
            segments=[(1.0, 0.0, 2000.0)],
            reservoir_min=0.0,
            reservoir_max=BIG_RESERVOIR,
            spill_min=0.0,
            spill_max=BIG_RESERVOIR,
            p_max=float(caps_h[0]),
            droop=4.0,
            strategic=True,
            id_volume_cap=20.0,
        )
    )
    for k in range(14):
        plants.append(
            HydroPlant(
                name=f"nst{k}",
                node=gen_buses[k],
                segments=[(0.9, 0.0, 2000.0)],
                reservoir_min=0.0,
                reservoir_max=BIG_RESERVOIR,
                spill_min=0.0,
                spill_max=BIG_RESERVOIR,
                p_max=float(caps_h[k + 1]),
                droop=4.0,
            )
        )
    thermals = [
        ThermalUnit(name=f"th{k}", node=gen_buses[14 + k], p_max=float(caps_t[k]), cost_da=float(c))
        for k, c in enumerate((12.0, 18.0, 30.0, 45.0))
    ]
    cascade = HydroCascade.from_upstream(np.zeros((15, 15)), np.zeros(15, dtype=int))
    bounds = {"st": BidBounds.uniform(1, horizon, 0.0, DA_CAP, 0.0, FC_CAP)}
    ins = MarketInstance(
        topology=topo,
        hydro_plants=plants,
        thermal_units=thermals,
        cascade=cascade,
        bid_bounds=bounds,
        horizon=horizon,
        num_segments=1,
        name="case-v",
    )

    profile = 1.0 + 0.25 * np.sin(np.linspace(0, 2 * np.pi, horizon, endpoint=False) - 1.2)
    load_buses = np.ones(nn)
    load_buses[gen_buses] = 0.4
    load_buses *= 4242.0 / load_buses.sum()
    scenarios = []
    total_cap = caps_h.sum() + caps_t.sum()
    for w in range(num_scenarios):
        wiggle = rng.normal(1.0, 0.08, size=horizon).clip(0.7, 1.3)
        dem = np.outer(load_buses, profile * wiggle) * rng.uniform(0.55, 0.8)
        peak = dem.sum(axis=0).max()
        if peak > 0.82 * total_cap:  # keep every period servable with margin
            dem *= 0.82 * total_cap / peak
        dfc = rng.uniform(40.0, 160.0, size=horizon) * profile
        cfc = np.zeros((len(plants) + len(thermals), horizon))
        cfc[1:15, :] = rng.uniform(20.0, 35.0)
        cfc[15:, :] = rng.uniform(25.0, 45.0, size=(4, 1))
        idp = rng.uniform(15.0, 45.0, size=horizon)
        scenarios.append(
            Scenario(
                probability=1.0 / num_scenarios,
                inflow=rng.uniform(50.0, 150.0, size=(15, horizon)),
                initial_content=rng.uniform(5e4, 1e5, size=15),
                demand_da=dem,
                demand_fc=dfc,
                cost_fc=cfc,
                id_price_up=np.tile(idp * 1.05, (nn, 1)),
                id_price_down=np.tile(idp * 0.95, (nn, 1)),
                future_price=float(rng.uniform(18.0, 30.0)),
                future_mu=np.full(15, 0.9),
                freq_dev=np.zeros(horizon),
            )
        )
    return ins, scenarios


CASE_BUILDERS = {
    "I": case_i,
    "II": case_ii,
    "III": case_iii,
    "IV": case_iv,
    "V": case_v,
}
