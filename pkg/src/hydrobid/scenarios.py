"""Historical data ingestion, the intraday/day-ahead price relation and
block-bootstrap scenario generation.

The bootstrap resamples whole days (preserving intraday correlation) with
integer index draws from a seeded generator, so scenario sets are
reproducible across platforms.  Intraday prices are not resampled
directly: they follow the fitted affine relation on the sampled day-ahead
path plus clipped residual noise.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .model import MarketInstance, Scenario

__all__ = [
    "MarketHistory",
    "IdDaRelation",
    "ingest_market_csv",
    "fit_id_da_relation",
    "generate_scenarios",
    "id_volume_limit",
    "history_schema",
]

RESIDUAL_CLIP = 6.0  # generated ID prices stay within this many residual stds


def history_schema(num_stations: int) -> list[str]:
    """Column names of the history CSV for a given number of hydro stations."""
    cols = ["timestamp", "da_price", "id_price_up", "id_price_down", "fcrn_price", "fcrn_demand", "da_demand"]
    cols += [f"inflow_{k}" for k in range(num_stations)]
    cols += [f"reservoir_{k}" for k in range(num_stations)]
    return cols


@dataclass
class MarketHistory:
    """Hourly market and hydrology series; one row per timestamp."""

    timestamps: list[datetime]
    da_price: np.ndarray
    id_price_up: np.ndarray
    id_price_down: np.ndarray
    fcrn_price: np.ndarray
    fcrn_demand: np.ndarray
    da_demand: np.ndarray
    inflow: np.ndarray  # (stations, T)
    reservoir: np.ndarray  # (stations, T)
    quarantined: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self):
        return len(self.timestamps)

    @property
    def num_stations(self) -> int:
        return self.inflow.shape[0]


@dataclass
class IdDaRelation:
    """Affine map from the day-ahead price to each intraday direction."""

    slope_up: float
    intercept_up: float
    residual_std_up: float
    slope_down: float
    intercept_down: float
    residual_std_down: float

    def predict_up(self, da):
        return self.slope_up * np.asarray(da) + self.intercept_up

    def predict_down(self, da):
        return self.slope_down * np.asarray(da) + self.intercept_down


def ingest_market_csv(path, num_stations: int) -> MarketHistory:
    """Parse and validate a history CSV; bad rows are quarantined, not dropped
    silently."""
    want = history_schema(num_stations)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError("empty history file")
        missing = [c for c in want if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"history file lacks columns: {missing}")
        rows = list(reader)
    if not rows:
        raise ValueError("history file has a header but no rows")
    ts, good, quarantined = [], [], []
    for i, row in enumerate(rows):
        try:
            stamp = datetime.fromisoformat(row["timestamp"])
        except ValueError as exc:
            quarantined.append((i, f"timestamp: {exc}"))
            continue
        try:
            vals = [float(row[c]) for c in want[1:]]
        except (TypeError, ValueError):
            quarantined.append((i, "unparseable numeric field"))
            continue
        if any(np.isnan(v) for v in vals):
            quarantined.append((i, "NaN field"))
            continue
        ts.append(stamp)
        good.append(vals)
    if not good:
        raise ValueError("no valid rows after validation")
    order = np.argsort(np.array([t.isoformat() for t in ts]), kind="stable")
    ts = [ts[i] for i in order]
    for a, b in zip(ts, ts[1:]):
        if b <= a:
            raise ValueError("timestamps are not strictly increasing")
    data = np.array(good)[order]
    k = num_stations
    return MarketHistory(
        timestamps=ts,
        da_price=data[:, 0],
        id_price_up=data[:, 1],
        id_price_down=data[:, 2],
        fcrn_price=data[:, 3],
        fcrn_demand=data[:, 4],
        da_demand=data[:, 5],
        inflow=data[:, 6 : 6 + k].T.copy(),
        reservoir=data[:, 6 + k : 6 + 2 * k].T.copy(),
        quarantined=quarantined,
    )


def fit_id_da_relation(history: MarketHistory) -> IdDaRelation:
    """Ordinary least squares of each intraday price on the day-ahead price."""
    da = history.da_price
    if np.unique(da).size < 2:
        raise ValueError("day-ahead prices are constant; the relation is degenerate")

    def ols(y):
        x = np.column_stack([da, np.ones_like(da)])
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
        resid = y - x @ coef
        return float(coef[0]), float(coef[1]), float(np.std(resid))

    su, iu, ru = ols(history.id_price_up)
    sd, idn, rd = ols(history.id_price_down)
    return IdDaRelation(su, iu, ru, sd, idn, rd)


@dataclass
class GeneratorConfig:
    """Knobs of the scenario generator; defaults suit hourly day blocks."""

    day_length: int = 24
    future_mu: float = 0.9
    freq_dev: float = 0.0
    demand_split: np.ndarray | None = None  # (nodes,) shares of system demand
    cost_fc_margin: float = 1.0  # scales the opportunity-cost proxy


def generate_scenarios(
    instance: MarketInstance,
    history: MarketHistory,
    relation: IdDaRelation,
    count: int,
    seed: int,
    config: GeneratorConfig | None = None,
) -> list[Scenario]:
    """Equiprobable scenarios by seeded whole-day block bootstrap.

    Inflows, initial reservoir levels, demands and reserve demand come from
    the sampled day; intraday prices are the fitted relation on the sampled
    day-ahead path plus clipped residual draws; the future price is the
    sampled day's mean day-ahead price, which also prices the non-strategic
    opportunity-cost proxy.
    """
    cfg = config or GeneratorConfig()
    nt = instance.horizon
    if count < 1:
        raise ValueError("scenario count must be >= 1")
    if len(history) < nt:
        raise ValueError("history shorter than the scheduling horizon")
    day = cfg.day_length
    num_days = len(history) // day
    if num_days < 1:
        raise ValueError("history shorter than one bootstrap block")
    blocks_per_scenario = (nt + day - 1) // day
    rng = np.random.default_rng(seed)
    nn = instance.topology.node_count
    nh = len(instance.hydro_plants)
    nu = len(instance.units)
    split = cfg.demand_split
    if split is None:
        split = np.full(nn, 1.0 / nn)
    split = np.asarray(split, dtype=float)

    out = []
    for w in range(count):
        picks = rng.integers(0, num_days, size=blocks_per_scenario)
        sel = np.concatenate([np.arange(d * day, (d + 1) * day) for d in picks])[:nt]
        da_path = history.da_price[sel]
        noise_up = np.clip(rng.standard_normal(nt), -RESIDUAL_CLIP, RESIDUAL_CLIP) * relation.residual_std_up
        noise_dn = np.clip(rng.standard_normal(nt), -RESIDUAL_CLIP, RESIDUAL_CLIP) * relation.residual_std_down
        id_up = relation.predict_up(da_path) + noise_up
        id_dn = relation.predict_down(da_path) + noise_dn
        lam_future = float(np.mean(da_path))
        inflow = np.zeros((nh, nt))
        m0 = np.zeros(nh)
        stations = min(nh, history.num_stations)
        for k in range(stations):
            inflow[k] = history.inflow[k, sel]
            m0[k] = history.reservoir[k, sel[0]]
        for k in range(stations, nh):
            inflow[k] = history.inflow[k % max(stations, 1), sel]
            m0[k] = history.reservoir[k % max(stations, 1), sel[0]]
        cost_fc = np.full((nu, nt), cfg.cost_fc_margin * lam_future)
        out.append(
            Scenario(
                probability=1.0 / count,
                inflow=inflow,
                initial_content=m0,
                demand_da=np.outer(split, history.da_demand[sel]),
                demand_fc=history.fcrn_demand[sel].copy(),
                cost_fc=cost_fc,
                id_price_up=np.tile(id_up, (nn, 1)),
                id_price_down=np.tile(id_dn, (nn, 1)),
                future_price=lam_future,
                future_mu=np.full(nh, cfg.future_mu),
                freq_dev=np.full(nt, cfg.freq_dev),
            )
        )
    return out


def id_volume_limit(da_dispatch, fraction: float) -> float:
    """Intraday cap as a fraction of the unit's period-average dispatch."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction outside [0, 1]")
    d = np.asarray(da_dispatch, dtype=float)
    if (d < 0).any():
        raise ValueError("negative dispatch")
    return float(fraction * d.mean())
