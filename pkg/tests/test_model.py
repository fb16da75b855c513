"""Data model: validation rules, cascade closure, stored-water valuation and
the JSON round trip."""
import numpy as np
import pytest

from hydrobid.cases import case_i, case_iii
from hydrobid.model import (
    HydroCascade,
    load_instance,
    load_scenarios,
    save_instance,
    save_scenarios,
    validate_instance,
    water_value,
)


def test_case_fixture_is_valid():
    ins, _ = case_i("M")
    assert validate_instance(ins) == []


def test_reversed_discharge_bounds_flagged():
    ins, _ = case_i("M")
    ins.hydro_plants[0].segments[0] = (1.0, 5.0, 2.0)
    msgs = validate_instance(ins)
    assert len(msgs) == 1
    assert "segment 0" in msgs[0] and "reversed" in msgs[0]


def test_cascade_cycle_flagged():
    ins, _ = case_i("M")
    up = np.array([[0.0, 1.0], [1.0, 0.0]])  # 1 -> 2 -> 1
    ins.cascade.upstream = up
    msgs = validate_instance(ins)
    assert any("cycle" in m for m in msgs)


def test_validation_is_idempotent():
    ins, _ = case_i("L")
    once = validate_instance(ins)
    twice = validate_instance(ins)
    assert once == twice == []


def test_downstream_is_reflexive_transitive_closure():
    up = np.zeros((3, 3))
    up[1, 0] = 1.0  # 0 releases into 1
    up[2, 1] = 1.0  # 1 releases into 2
    cas = HydroCascade.from_upstream(up, np.zeros(3, dtype=int))
    expected = np.array([[1, 1, 1], [0, 1, 1], [0, 0, 1]], dtype=float)
    assert np.array_equal(cas.downstream, expected)
    assert cas.is_acyclic()


def test_water_value_zero_content():
    ins, scen = case_iii()
    assert water_value(np.zeros(2), ins.cascade, scen[0].future_price, scen[0].future_mu) == 0.0


def test_water_value_single_station():
    cas = HydroCascade.from_upstream(np.zeros((1, 1)), np.zeros(1, dtype=int))
    assert water_value([300.0], cas, 26.0, [0.9]) == pytest.approx(7020.0)


def test_water_value_two_station_chain():
    # station 0 upstream of station 1: a stored m3 at 0 passes both turbines,
    # 10 * 10 * (0.9 + 0.9) = 180 expanded by hand
    up = np.zeros((2, 2))
    up[1, 0] = 1.0
    cas = HydroCascade.from_upstream(up, np.zeros(2, dtype=int))
    assert water_value([10.0, 0.0], cas, 10.0, [0.9, 0.9]) == pytest.approx(180.0)


def test_water_value_linear_in_content_and_price():
    rng = np.random.default_rng(0)
    up = np.zeros((3, 3))
    up[1, 0] = 1.0
    cas = HydroCascade.from_upstream(up, np.zeros(3, dtype=int))
    mu = rng.uniform(0.5, 1.5, 3)
    m = rng.uniform(0, 100, 3)
    base = water_value(m, cas, 20.0, mu)
    assert water_value(3.0 * m, cas, 20.0, mu) == pytest.approx(3.0 * base)
    assert water_value(m, cas, 40.0, mu) == pytest.approx(2.0 * base)


def test_water_value_dimension_mismatch():
    cas = HydroCascade.from_upstream(np.zeros((2, 2)), np.zeros(2, dtype=int))
    with pytest.raises(ValueError):
        water_value([1.0], cas, 10.0, [0.9, 0.9])


def test_instance_and_scenarios_json_round_trip(tmp_path):
    ins, scens = case_iii()
    save_instance(ins, tmp_path / "ins.json")
    save_scenarios(scens, tmp_path / "sc.json")
    back = load_instance(tmp_path / "ins.json")
    bscens = load_scenarios(tmp_path / "sc.json")
    assert validate_instance(back) == []
    assert back.horizon == ins.horizon
    assert [p.name for p in back.hydro_plants] == [p.name for p in ins.hydro_plants]
    assert np.allclose(back.cascade.downstream, ins.cascade.downstream)
    assert np.allclose(bscens[0].demand_da, scens[0].demand_da)
    assert np.allclose(bscens[0].id_price_up, scens[0].id_price_up)
    # saving the reloaded objects reproduces the files byte for byte
    save_instance(back, tmp_path / "ins2.json")
    assert (tmp_path / "ins.json").read_bytes() == (tmp_path / "ins2.json").read_bytes()
