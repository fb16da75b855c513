"""End-to-end drivers for the bundled case studies: solve, tabulate and
emit plot data as deterministic CSV files."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cases as case_mod
from .bilevel import BigMConfig, solve_bilevel, verify_reformulation
from .da import build_da_lp, clear_da, nonstrategic_units, strategic_plants, water_chain
from .fcrn import build_fcrn_lp, clear_fcrn
from .lp import LIMIT, MilpOptions, export_model, parse_model
from .bilevel import build_single_level_milp
from .model import BidCurve, MarketInstance, Scenario, load_instance, load_scenarios
from .pricepdf import fit_price_pdfs

__all__ = ["CaseConfig", "CaseReport", "run_case", "sweep_demand", "emit_plot_data", "simulate_clearings"]

CASE_IDS = ("I", "II", "III", "IV", "V", "custom")


@dataclass
class CaseConfig:
    case_id: str = "I"
    instance_file: str | None = None  # custom cases
    scenario_source: str = "inline"  # "inline" or a scenario JSON path
    seed: int = 0
    gap: float = 1e-6
    time_limit: float | None = None
    max_nodes: int | None = None
    num_scenarios: int = 20  # case V
    horizon: int | None = None  # case V override
    try_solve: bool = False  # case V: attempt the MILP in-process
    output_dir: str = "."

    def __post_init__(self):
        if self.case_id not in CASE_IDS:
            raise ValueError(f"unknown case id {self.case_id!r}")
        if self.case_id == "custom" and not self.instance_file:
            raise ValueError("custom cases need an instance file")
        if self.instance_file and not Path(self.instance_file).exists():
            raise ValueError(f"instance file {self.instance_file} does not exist")

    @classmethod
    def from_json(cls, path) -> "CaseConfig":
        with open(path) as fh:
            return cls(**json.load(fh))

    def milp_options(self) -> MilpOptions:
        return MilpOptions(abs_gap=self.gap, time_limit=self.time_limit, max_nodes=self.max_nodes)


@dataclass
class CaseReport:
    case_id: str
    status: str
    tables: list[dict] = field(default_factory=list)
    decomposition: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)  # per-period arrays (case III/IV)
    boxplot: dict = field(default_factory=dict)  # period -> five-number summary
    pdfs: dict = field(default_factory=dict)  # label -> GroupPdf
    bid_curves: dict = field(default_factory=dict)
    solutions: list = field(default_factory=list)
    export_path: str | None = None
    wall_clock: float = 0.0
    verification: str = ""


def _solve_row(builder, level, with_fcrn, options):
    ins, scens = builder(level, with_fcrn=with_fcrn)
    sol = solve_bilevel(ins, scens, options=options)
    r = sol.da_results[0]
    ns = nonstrategic_units(ins)
    row = {
        "level": level,
        "fcrn": with_fcrn,
        "demand_da": tuple(float(scens[0].demand_da[n, 0]) for n in range(3)),
        "demand_fc": float(scens[0].demand_fc[0]),
        "gen_da": (
            float(r.dispatch["p_da"][0].sum(axis=0)[0]),
            float(r.dispatch["g_da"][0, 0]),
            float(r.dispatch["g_da"][1, 0]),
        ),
        "lambda_da": tuple(float(v) for v in sol.prices_da[0][:, 0]),
    }
    if with_fcrn:
        f = sol.fc_results[0]
        row["gen_fc"] = (
            float(f.dispatch["p_fc"][0].sum(axis=0)[0]),
            float(f.dispatch["g_fc"][0, 0]),
            float(f.dispatch["g_fc"][1, 0]),
        )
        row["lambda_fc"] = float(sol.prices_fc[0][0])
    return row, sol, ins, scens


def run_case(config: CaseConfig) -> CaseReport:
    """Solve a bundled or custom case and assemble its report."""
    t0 = time.monotonic()
    rep = CaseReport(case_id=config.case_id, status="optimal")
    options = config.milp_options()
    if config.case_id in ("I", "II"):
        builder = case_mod.case_i if config.case_id == "I" else case_mod.case_ii
        checks = []
        for with_fcrn in (False, True):
            for level in ("L", "M", "H"):
                row, sol, ins, scens = _solve_row(builder, level, with_fcrn, options)
                rep.tables.append(row)
                rep.solutions.append(sol)
                checks.append(verify_reformulation(ins, scens, sol).passed)
        rep.verification = "all-pass" if all(checks) else "FAILED"
    elif config.case_id == "III":
        ins, scens = case_mod.case_iii()
        sol = solve_bilevel(ins, scens, options=options)
        rep.solutions.append(sol)
        rep.decomposition = sol.decomposition
        r = sol.da_results[0]
        rep.series = {
            "lambda_da": sol.prices_da[0][0].tolist(),
            "lambda_fc": sol.prices_fc[0].tolist(),
            "p_da_st": r.dispatch["p_da"][0].sum(axis=0).tolist(),
            "id_sell": sol.upper.id_sell[0, :, 0].tolist(),
            "id_buy": sol.upper.id_buy[0, :, 0].tolist(),
            "reservoir_st": r.dispatch["m"][0].tolist(),
        }
        rep.bid_curves = {nm: {k: (c.prices.tolist(), c.volumes.tolist()) for k, c in e.items()} for nm, e in _curves(sol).items()}
        rep.verification = verify_reformulation(ins, scens, sol).summary()
        rep.status = sol.milp.status
    elif config.case_id == "IV":
        ins, scens = case_mod.case_iv()
        opts = config.milp_options()
        if opts.time_limit is None and opts.max_nodes is None:
            opts.max_nodes = 4000
        sol = solve_bilevel(ins, scens, options=opts)
        rep.solutions.append(sol)
        rep.decomposition = sol.decomposition
        r = sol.da_results[0]
        rep.series = {
            "lambda_da_bus1": sol.prices_da[0][0].tolist(),
            "lambda_fc": sol.prices_fc[0].tolist(),
            "p_da_st": r.dispatch["p_da"][0].sum(axis=0).tolist(),  # aggregate over segments
            "id_sell": sol.upper.id_sell[0, :, 0].tolist(),
            "id_buy": sol.upper.id_buy[0, :, 0].tolist(),
            "demand_total": scens[0].demand_da.sum(axis=0).tolist(),
            "id_price_up": scens[0].id_price_up[0].tolist(),
            "id_price_down": scens[0].id_price_down[0].tolist(),
        }
        rep.status = sol.milp.status
    elif config.case_id == "V":
        ins, scens = case_mod.case_v(num_scenarios=config.num_scenarios, horizon=config.horizon or 24, seed=118 + config.seed)
        lam_fc = simulate_clearings(ins, scens)
        rep.series["lambda_fc_samples"] = lam_fc.tolist()
        for t in range(lam_fc.shape[1]):
            q = np.percentile(lam_fc[:, t], [0, 25, 50, 75, 100])
            rep.boxplot[t] = tuple(float(v) for v in q)
        groups = {f"t{t}": lam_fc[:, t] for t in range(lam_fc.shape[1])}
        rep.pdfs = fit_price_pdfs(groups, draws=600, warmup=200, seed=config.seed, thresholds=(48.0, 12.0))
        small_ins, small_scens = case_mod.case_v(num_scenarios=2, horizon=6, seed=118 + config.seed)
        prog = build_single_level_milp(small_ins, small_scens)
        out = Path(config.output_dir) / "case_v_milp.mps"
        export_model(prog.mip, out, "mps")
        back = parse_model(out)
        if (back.lp.num_rows, back.lp.num_cols) != (prog.mip.lp.num_rows, prog.mip.lp.num_cols):
            raise RuntimeError("exported model does not round-trip")
        rep.export_path = str(out)
        rep.status = "exported"
        if config.try_solve:
            opts = config.milp_options()
            if opts.time_limit is None:
                opts.time_limit = 600.0
            sol = solve_bilevel(small_ins, small_scens, options=opts)
            rep.solutions.append(sol)
            rep.status = sol.milp.status
    else:
        ins = load_instance(config.instance_file)
        if config.scenario_source == "inline":
            raise ValueError("custom cases need a scenario file path in scenario_source")
        scens = load_scenarios(config.scenario_source)
        sol = solve_bilevel(ins, scens, options=options)
        rep.solutions.append(sol)
        rep.decomposition = sol.decomposition
        rep.verification = verify_reformulation(ins, scens, sol).summary()
        rep.status = sol.milp.status
    rep.wall_clock = time.monotonic() - t0
    return rep


def _curves(sol):
    from .bilevel import extract_bids

    return extract_bids(sol)


def sweep_demand(kind: str = "da", points: int = 25, options: MilpOptions | None = None):
    """Price curves against scaled demand, reproducing the merit-order plateaus.

    ``kind="da"``: the three-bus day-ahead demands (50, 50, 70) are scaled
    over [0, 2] without a reserve market and the strategic problem is
    re-solved per point, tracing plateaus 0/15/200 with breaks at 50 and
    150 MW of total demand.  ``kind="fcrn"``: the day-ahead outcome is
    pinned at demands (44.1, 44.1, 61.8) with the strategic unit offering
    50 MW at the thermal cost (the stack dispatches 50/50/50), and the
    reserve demand sweeps up to 100 MW through sequential clearing,
    tracing plateaus 30/100 with a break at 50 MW where thermal headroom
    runs out.
    """
    rows = []
    options = options or MilpOptions()
    if kind == "da":
        for g in np.linspace(0.0, 2.0, points):
            ins, scens = case_mod.case_i("M", with_fcrn=False)
            base = np.array([50.0, 50.0, 70.0]) * g
            for n in range(3):
                scens[0].demand_da[n, :] = base[n]
            try:
                sol = solve_bilevel(ins, scens, options=options)
                lam = float(sol.prices_da[0][0, 0])
            except RuntimeError:
                lam = float("nan")  # demand beyond installed capacity
            rows.append((float(base.sum()), lam, float("nan")))
    elif kind == "fcrn":
        ins, scens = case_mod.case_i("M", with_fcrn=True)
        scen = scens[0]
        for n, v in enumerate((44.1, 44.1, 61.8)):
            scen.demand_da[n, :] = v
        da_bids = {"st": BidCurve("st", "da", [[15.0]], [[50.0]])}
        fc_bids = {"st": BidCurve("st", "fcrn", [[100.0]], [[50.0]])}
        da_res = clear_da(build_da_lp(ins, da_bids, scen))
        if da_res.status != "optimal":
            raise RuntimeError("fixed day-ahead point failed to clear")
        for d in np.linspace(4.0, 100.0, points):
            scen.demand_fc[:] = d
            fc_res = clear_fcrn(build_fcrn_lp(ins, fc_bids, da_res, scen))
            lfc = float(fc_res.prices[0]) if fc_res.status == "optimal" else float("nan")
            rows.append((float(d), float(da_res.prices[0, 0]), lfc))
    else:
        raise ValueError(f"unknown sweep kind {kind!r}")
    return rows


def simulate_clearings(instance: MarketInstance, scenarios: list[Scenario]) -> np.ndarray:
    """Sequentially clear both markets per scenario with a competitive
    strategic baseline (bids at marginal water value, full volume); returns
    the reserve prices (scenarios x periods).

    This is the sampling mode behind the large-case price statistics: the
    single-level model does not have to be solved to observe clearing-price
    variability across scenarios.
    """
    nt = instance.horizon
    out = np.zeros((len(scenarios), nt))
    da_basis = fc_basis = None  # warm starts across structurally equal scenarios
    for w, scen in enumerate(scenarios):
        chain = water_chain(instance, scen)
        da_bids, fc_bids = {}, {}
        for p, plant in strategic_plants(instance):
            marg = chain[p] / max(plant.mu.max(), 1e-9)
            bb = instance.bid_bounds[plant.name]
            price = np.clip(np.full((instance.num_segments, nt), marg), bb.da_min, bb.da_max)
            vol = np.full((instance.num_segments, nt), plant.p_max / instance.num_segments)
            da_bids[plant.name] = BidCurve(plant.name, "da", price, vol)
            fprice = np.clip(np.full((instance.num_segments, nt), marg), bb.fc_min, bb.fc_max)
            fc_bids[plant.name] = BidCurve(plant.name, "fcrn", fprice, vol * 0.5)
        da_res = clear_da(build_da_lp(instance, da_bids, scen), warm_basis=da_basis)
        if da_res.status != "optimal":
            raise RuntimeError(f"scenario {w}: day-ahead clearing {da_res.status}")
        da_basis = da_res.solution.basis
        fc_res = clear_fcrn(build_fcrn_lp(instance, fc_bids, da_res, scen), warm_basis=fc_basis)
        if fc_res.status != "optimal":
            raise RuntimeError(f"scenario {w}: reserve clearing {fc_res.status}")
        fc_basis = fc_res.solution.basis
        out[w] = fc_res.prices
    return out


def emit_plot_data(report: CaseReport, kind: str, path) -> None:
    """Write one plot-data CSV: profile, boxplot, pdf or bidcurve."""
    path = Path(path)
    if kind == "profile":
        if not report.series:
            raise ValueError("report carries no per-period series")
        keys = sorted(k for k, v in report.series.items() if isinstance(v, list) and v and not isinstance(v[0], list))
        nt = len(report.series[keys[0]])
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["period"] + keys)
            for t in range(nt):
                wr.writerow([t] + [report.series[k][t] for k in keys])
    elif kind == "boxplot":
        if not report.boxplot:
            raise ValueError("report carries no boxplot data")
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["period", "min", "q1", "median", "q3", "max"])
            for t in sorted(report.boxplot):
                wr.writerow([t] + list(report.boxplot[t]))
    elif kind == "pdf":
        if not report.pdfs:
            raise ValueError("report carries no density data")
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["group", "grid", "density"])
            for label in sorted(report.pdfs):
                g = report.pdfs[label]
                for x, d in zip(g.grid, g.density):
                    wr.writerow([label, repr(float(x)), repr(float(d))])
    elif kind == "bidcurve":
        if not report.bid_curves:
            raise ValueError("report carries no bid curves")
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["unit", "market", "segment", "period", "price", "volume"])
            for unit in sorted(report.bid_curves):
                for market in sorted(report.bid_curves[unit]):
                    prices, volumes = report.bid_curves[unit][market]
                    for s, rowp in enumerate(prices):
                        for t, p in enumerate(rowp):
                            wr.writerow([unit, market, s, t, repr(float(p)), repr(float(volumes[s][t]))])
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
