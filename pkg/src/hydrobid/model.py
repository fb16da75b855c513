"""Problem data for the sequential market model: grid, hydro cascade, units,
bid bounds and per-scenario stochastic parameters.

Everything here is plain data with validation; no solving.  Volumes are m3
per hourly period, powers MW, energy MWh (1 h periods, so MW and MWh agree
numerically), prices EUR/MWh, reserve prices EUR/MW.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NetworkTopology",
    "HydroPlant",
    "HydroCascade",
    "ThermalUnit",
    "BidBounds",
    "BidCurve",
    "Scenario",
    "MarketInstance",
    "validate_instance",
    "water_value",
    "load_instance",
    "save_instance",
    "load_scenarios",
    "save_scenarios",
]


@dataclass
class NetworkTopology:
    """Transport grid: nodes and NTC-limited lines (no susceptances)."""

    node_count: int
    lines: list[tuple[int, int, float]]  # (from_node, to_node, ntc MW)

    def incidence(self) -> np.ndarray:
        """Line-node incidence: -1 at the from node, +1 at the to node."""
        a = np.zeros((len(self.lines), self.node_count))
        for l, (u, v, _) in enumerate(self.lines):
            a[l, u] = -1.0
            a[l, v] = 1.0
        return a

    @property
    def ntc(self) -> np.ndarray:
        return np.array([c for _, _, c in self.lines], dtype=float)


@dataclass
class HydroPlant:
    """One station: turbine segments, reservoir, spillage and droop data."""

    name: str
    node: int
    segments: list[tuple[float, float, float]]  # (mu MWh/m3, q_min, q_max m3)
    reservoir_min: float
    reservoir_max: float
    spill_min: float
    spill_max: float
    p_max: float
    droop: float = 4.0
    strategic: bool = False
    hist_release: float = 0.0  # pre-horizon release feeding delayed inflow
    id_volume_cap: float = 0.0  # intraday trade cap, strategic units only

    @property
    def mu(self) -> np.ndarray:
        return np.array([m for m, _, _ in self.segments], dtype=float)

    @property
    def q_min(self) -> np.ndarray:
        return np.array([a for _, a, _ in self.segments], dtype=float)

    @property
    def q_max(self) -> np.ndarray:
        return np.array([b for _, _, b in self.segments], dtype=float)


@dataclass
class HydroCascade:
    """Water routing between stations, in hydro-plant index space.

    ``upstream[n, j] = 1`` when station j releases directly into station n,
    with a whole-period delay ``tau[j]``.  ``downstream[n, j] = 1`` when
    water stored at n eventually passes the turbines of j (including n
    itself); it is the reflexive-transitive closure of the upstream
    relation and is recomputed by :meth:`from_upstream`.
    """

    upstream: np.ndarray
    tau: np.ndarray
    downstream: np.ndarray

    @classmethod
    def from_upstream(cls, upstream, tau) -> "HydroCascade":
        up = np.asarray(upstream, dtype=float)
        tau = np.asarray(tau, dtype=int)
        n = up.shape[0]
        # edge j -> n when j is directly upstream of n; downstream reach of a
        # station is the set of stations its water will flow through
        reach = np.eye(n, dtype=bool)
        adj = up.T.astype(bool)  # adj[j, n]: water at j flows next to n
        for _ in range(n):
            new = reach | (reach @ adj)
            if (new == reach).all():
                break
            reach = new
        return cls(upstream=up, tau=tau, downstream=reach.astype(float))

    def is_acyclic(self) -> bool:
        n = self.upstream.shape[0]
        adj = self.upstream.T.astype(bool)
        power = adj.copy()
        for _ in range(n):
            if power.diagonal().any():
                return False
            power = power @ adj
        return True


@dataclass
class ThermalUnit:
    name: str
    node: int
    p_max: float
    cost_da: float


@dataclass
class BidBounds:
    """Per-segment, per-period price floors and caps for one strategic unit."""

    da_min: np.ndarray  # (NB, NT)
    da_max: np.ndarray
    fc_min: np.ndarray
    fc_max: np.ndarray

    @classmethod
    def uniform(cls, nb, nt, da_min, da_max, fc_min, fc_max) -> "BidBounds":
        full = lambda v: np.full((nb, nt), float(v))
        return cls(full(da_min), full(da_max), full(fc_min), full(fc_max))


@dataclass
class BidCurve:
    """Stepwise offer of one unit in one market: (price, volume) per segment/period."""

    unit: str
    market: str  # "da" or "fcrn"
    prices: np.ndarray  # (NB, NT)
    volumes: np.ndarray  # (NB, NT)

    def __post_init__(self):
        self.prices = np.atleast_2d(np.asarray(self.prices, dtype=float))
        self.volumes = np.atleast_2d(np.asarray(self.volumes, dtype=float))
        if self.prices.shape != self.volumes.shape:
            raise ValueError("bid price and volume arrays differ in shape")

    def is_monotone(self, tol: float = 1e-9) -> bool:
        return bool((np.diff(self.prices, axis=0) >= -tol).all())

    def steps(self, t: int) -> list[tuple[float, float]]:
        order = np.argsort(self.prices[:, t], kind="stable")
        return [(float(self.prices[s, t]), float(self.volumes[s, t])) for s in order]


@dataclass
class Scenario:
    """One realisation of the stochastic parameters."""

    probability: float
    inflow: np.ndarray  # (NH, NT) m3
    initial_content: np.ndarray  # (NH,) m3
    demand_da: np.ndarray  # (nodes, NT) MWh
    demand_fc: np.ndarray  # (NT,) MW
    cost_fc: np.ndarray  # (units, NT) EUR/MW, read for non-strategic units
    id_price_up: np.ndarray  # (nodes, NT) EUR/MWh, selling
    id_price_down: np.ndarray  # (nodes, NT) EUR/MWh, buying
    future_price: float  # EUR/MWh
    future_mu: np.ndarray  # (NH,) MWh/m3
    freq_dev: np.ndarray = None  # (NT,) Hz

    def __post_init__(self):
        for name in ("inflow", "initial_content", "demand_da", "demand_fc", "cost_fc", "id_price_up", "id_price_down", "future_mu"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        nt = self.demand_da.shape[1] if self.demand_da.ndim == 2 else len(self.demand_fc)
        if self.freq_dev is None:
            self.freq_dev = np.zeros(nt)
        self.freq_dev = np.asarray(self.freq_dev, dtype=float)


@dataclass
class MarketInstance:
    """Deterministic problem data shared by every scenario."""

    topology: NetworkTopology
    hydro_plants: list[HydroPlant]
    thermal_units: list[ThermalUnit]
    cascade: HydroCascade
    bid_bounds: dict[str, BidBounds]
    horizon: int  # NT
    num_segments: int = 1  # NB
    id_volume_fraction: float = 0.05
    include_fcrn: bool = True
    name: str = "instance"

    @property
    def units(self) -> list:
        return list(self.hydro_plants) + list(self.thermal_units)

    @property
    def strategic(self) -> list[HydroPlant]:
        return [p for p in self.hydro_plants if p.strategic]

    @property
    def nonstrategic_hydro(self) -> list[HydroPlant]:
        return [p for p in self.hydro_plants if not p.strategic]

    def unit_index(self, name: str) -> int:
        for k, u in enumerate(self.units):
            if u.name == name:
                return k
        raise KeyError(name)


def water_value(final_content, cascade: HydroCascade, future_price: float, future_mu) -> float:
    """Value of end-of-horizon storage priced through downstream turbines.

    Each stored m3 at station n is worth the future price times the sum of
    production equivalents of every station the water will still pass.
    """
    m = np.asarray(final_content, dtype=float)
    mu = np.asarray(future_mu, dtype=float)
    if m.shape[0] != cascade.downstream.shape[0] or mu.shape[0] != cascade.downstream.shape[1]:
        raise ValueError("content/cascade dimension mismatch")
    return float(future_price * m @ (cascade.downstream @ mu))


def validate_instance(instance: MarketInstance) -> list[str]:
    """Collect invariant violations as human-readable strings (empty = valid)."""
    v: list[str] = []
    topo = instance.topology
    for l, (u, w, cap) in enumerate(topo.lines):
        if not (0 <= u < topo.node_count and 0 <= w < topo.node_count):
            v.append(f"line {l}: endpoint out of range")
        if cap < 0:
            v.append(f"line {l}: negative ntc")
        if u == w:
            v.append(f"line {l}: degenerate self-loop")
    inc = topo.incidence()
    for l in range(len(topo.lines)):
        if not (np.sum(inc[l] == 1.0) == 1 and np.sum(inc[l] == -1.0) == 1):
            v.append(f"line {l}: incidence row lacks one +1 and one -1")

    names = set()
    for p in instance.hydro_plants:
        if p.name in names:
            v.append(f"plant {p.name}: duplicate unit name")
        names.add(p.name)
        if not 0 <= p.node < topo.node_count:
            v.append(f"plant {p.name}: node out of range")
        for k, (mu, qlo, qhi) in enumerate(p.segments):
            if mu <= 0:
                v.append(f"plant {p.name} segment {k}: production equivalent must be > 0")
            if qlo > qhi:
                v.append(f"plant {p.name} segment {k}: discharge bounds reversed (q_min > q_max)")
            if qlo < 0:
                v.append(f"plant {p.name} segment {k}: negative discharge bound")
        if p.reservoir_min > p.reservoir_max:
            v.append(f"plant {p.name}: reservoir bounds reversed")
        if p.spill_min > p.spill_max:
            v.append(f"plant {p.name}: spillage bounds reversed")
        if min(p.reservoir_min, p.spill_min) < 0:
            v.append(f"plant {p.name}: negative reservoir/spill bound")
        if p.droop <= 0:
            v.append(f"plant {p.name}: droop must be > 0")
        if p.p_max <= 0:
            v.append(f"plant {p.name}: p_max must be > 0")
    for u in instance.thermal_units:
        if u.name in names:
            v.append(f"unit {u.name}: duplicate unit name")
        names.add(u.name)
        if not 0 <= u.node < topo.node_count:
            v.append(f"unit {u.name}: node out of range")
        if u.cost_da < 0:
            v.append(f"unit {u.name}: negative day-ahead cost")
        if u.p_max <= 0:
            v.append(f"unit {u.name}: p_max must be > 0")

    nh = len(instance.hydro_plants)
    cas = instance.cascade
    if cas.upstream.shape != (nh, nh) or cas.downstream.shape != (nh, nh):
        v.append("cascade: matrix shape does not match number of hydro plants")
    else:
        if not cas.is_acyclic():
            v.append("cascade: upstream relation has a cycle")
        else:
            closure = HydroCascade.from_upstream(cas.upstream, cas.tau).downstream
            if not np.array_equal(closure, cas.downstream):
                v.append("cascade: downstream matrix is not the reflexive-transitive closure")
        if not np.allclose(np.diag(cas.downstream), 1.0):
            v.append("cascade: downstream diagonal must be 1")
        if (cas.tau < 0).any():
            v.append("cascade: negative delay")

    for p in instance.strategic:
        bb = instance.bid_bounds.get(p.name)
        if bb is None:
            v.append(f"plant {p.name}: strategic unit without bid bounds")
            continue
        shape = (instance.num_segments, instance.horizon)
        for fieldname in ("da_min", "da_max", "fc_min", "fc_max"):
            if getattr(bb, fieldname).shape != shape:
                v.append(f"plant {p.name}: bid bound {fieldname} shape != (NB, NT)")
        if (bb.da_min > bb.da_max + 1e-12).any():
            v.append(f"plant {p.name}: da bid floor above cap")
        if (bb.fc_min > bb.fc_max + 1e-12).any():
            v.append(f"plant {p.name}: fcrn bid floor above cap")

    if not 0 <= instance.id_volume_fraction <= 1:
        v.append("id_volume_fraction outside [0, 1]")
    if instance.horizon < 1:
        v.append("horizon must be >= 1")
    return v


def validate_scenarios(instance: MarketInstance, scenarios: list[Scenario]) -> list[str]:
    v = []
    nh = len(instance.hydro_plants)
    nn = instance.topology.node_count
    nt = instance.horizon
    nu = len(instance.units)
    total = 0.0
    for w, s in enumerate(scenarios):
        if s.probability < 0:
            v.append(f"scenario {w}: negative probability")
        total += s.probability
        checks = [
            ("inflow", s.inflow, (nh, nt)),
            ("initial_content", s.initial_content, (nh,)),
            ("demand_da", s.demand_da, (nn, nt)),
            ("demand_fc", s.demand_fc, (nt,)),
            ("cost_fc", s.cost_fc, (nu, nt)),
            ("id_price_up", s.id_price_up, (nn, nt)),
            ("id_price_down", s.id_price_down, (nn, nt)),
            ("future_mu", s.future_mu, (nh,)),
            ("freq_dev", s.freq_dev, (nt,)),
        ]
        for nm, arr, shape in checks:
            if arr.shape != shape:
                v.append(f"scenario {w}: {nm} shape {arr.shape} != {shape}")
        if (s.demand_da < 0).any() or (s.demand_fc < 0).any():
            v.append(f"scenario {w}: negative demand")
    if scenarios and abs(total - 1.0) > 1e-9:
        v.append(f"scenario probabilities sum to {total}, expected 1")
    return v


# ---------------------------------------------------------------------------
# JSON persistence (schema documented in the README)
# ---------------------------------------------------------------------------


def _instance_to_dict(ins: MarketInstance) -> dict:
    return {
        "name": ins.name,
        "horizon": ins.horizon,
        "num_segments": ins.num_segments,
        "id_volume_fraction": ins.id_volume_fraction,
        "include_fcrn": ins.include_fcrn,
        "topology": {
            "node_count": ins.topology.node_count,
            "lines": [[u, v, c] for u, v, c in ins.topology.lines],
        },
        "hydro_plants": [
            {
                "name": p.name,
                "node": p.node,
                "segments": [list(s) for s in p.segments],
                "reservoir_min": p.reservoir_min,
                "reservoir_max": p.reservoir_max,
                "spill_min": p.spill_min,
                "spill_max": p.spill_max,
                "p_max": p.p_max,
                "droop": p.droop,
                "strategic": p.strategic,
                "hist_release": p.hist_release,
                "id_volume_cap": p.id_volume_cap,
            }
            for p in ins.hydro_plants
        ],
        "thermal_units": [
            {"name": u.name, "node": u.node, "p_max": u.p_max, "cost_da": u.cost_da}
            for u in ins.thermal_units
        ],
        "cascade": {
            "upstream": ins.cascade.upstream.tolist(),
            "tau": ins.cascade.tau.tolist(),
        },
        "bid_bounds": {
            nm: {
                "da_min": bb.da_min.tolist(),
                "da_max": bb.da_max.tolist(),
                "fc_min": bb.fc_min.tolist(),
                "fc_max": bb.fc_max.tolist(),
            }
            for nm, bb in ins.bid_bounds.items()
        },
    }


def _instance_from_dict(d: dict) -> MarketInstance:
    topo = NetworkTopology(
        node_count=int(d["topology"]["node_count"]),
        lines=[(int(u), int(v), float(c)) for u, v, c in d["topology"]["lines"]],
    )
    plants = [
        HydroPlant(
            name=p["name"],
            node=int(p["node"]),
            segments=[tuple(map(float, s)) for s in p["segments"]],
            reservoir_min=float(p["reservoir_min"]),
            reservoir_max=float(p["reservoir_max"]),
            spill_min=float(p["spill_min"]),
            spill_max=float(p["spill_max"]),
            p_max=float(p["p_max"]),
            droop=float(p.get("droop", 4.0)),
            strategic=bool(p.get("strategic", False)),
            hist_release=float(p.get("hist_release", 0.0)),
            id_volume_cap=float(p.get("id_volume_cap", 0.0)),
        )
        for p in d["hydro_plants"]
    ]
    thermals = [
        ThermalUnit(name=u["name"], node=int(u["node"]), p_max=float(u["p_max"]), cost_da=float(u["cost_da"]))
        for u in d["thermal_units"]
    ]
    cascade = HydroCascade.from_upstream(d["cascade"]["upstream"], d["cascade"]["tau"])
    bounds = {
        nm: BidBounds(
            da_min=np.asarray(bb["da_min"], dtype=float),
            da_max=np.asarray(bb["da_max"], dtype=float),
            fc_min=np.asarray(bb["fc_min"], dtype=float),
            fc_max=np.asarray(bb["fc_max"], dtype=float),
        )
        for nm, bb in d["bid_bounds"].items()
    }
    return MarketInstance(
        topology=topo,
        hydro_plants=plants,
        thermal_units=thermals,
        cascade=cascade,
        bid_bounds=bounds,
        horizon=int(d["horizon"]),
        num_segments=int(d.get("num_segments", 1)),
        id_volume_fraction=float(d.get("id_volume_fraction", 0.05)),
        include_fcrn=bool(d.get("include_fcrn", True)),
        name=d.get("name", "instance"),
    )


def save_instance(instance: MarketInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(_instance_to_dict(instance), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_instance(path) -> MarketInstance:
    with open(path) as fh:
        return _instance_from_dict(json.load(fh))


def _scenario_to_dict(s: Scenario) -> dict:
    return {
        "probability": s.probability,
        "inflow": s.inflow.tolist(),
        "initial_content": s.initial_content.tolist(),
        "demand_da": s.demand_da.tolist(),
        "demand_fc": s.demand_fc.tolist(),
        "cost_fc": s.cost_fc.tolist(),
        "id_price_up": s.id_price_up.tolist(),
        "id_price_down": s.id_price_down.tolist(),
        "future_price": s.future_price,
        "future_mu": s.future_mu.tolist(),
        "freq_dev": s.freq_dev.tolist(),
    }


def _scenario_from_dict(d: dict) -> Scenario:
    return Scenario(
        probability=float(d["probability"]),
        inflow=d["inflow"],
        initial_content=d["initial_content"],
        demand_da=d["demand_da"],
        demand_fc=d["demand_fc"],
        cost_fc=d["cost_fc"],
        id_price_up=d["id_price_up"],
        id_price_down=d["id_price_down"],
        future_price=float(d["future_price"]),
        future_mu=d["future_mu"],
        freq_dev=d["freq_dev"],
    )


def save_scenarios(scenarios: list[Scenario], path) -> None:
    with open(path, "w") as fh:
        json.dump([_scenario_to_dict(s) for s in scenarios], fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_scenarios(path) -> list[Scenario]:
    with open(path) as fh:
        return [_scenario_from_dict(d) for d in json.load(fh)]
