"""Command line front end: run cases, sweep demand, export models, fit PDFs.

Exit codes: 0 solved to optimality (or export completed), 2 a node/time
limit stopped the search (best incumbent reported), 3 infeasible input.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .harness import CaseConfig, emit_plot_data, run_case, sweep_demand
from .lp import LIMIT, MilpOptions, export_model, parse_model
from .pricepdf import fit_price_pdfs

EXIT_OK = 0
EXIT_LIMIT = 2
EXIT_INFEASIBLE = 3


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gap", type=float, default=1e-6, help="absolute MILP gap")
    p.add_argument("--time-limit", type=float, default=None, help="seconds")
    p.add_argument("--max-nodes", type=int, default=None)
    p.add_argument("--out-dir", default=".")


def _config_from_args(args) -> CaseConfig:
    if args.config:
        cfg = CaseConfig.from_json(args.config)
    else:
        cfg = CaseConfig(case_id=args.case)
    cfg.seed = args.seed
    cfg.gap = args.gap
    cfg.time_limit = args.time_limit
    cfg.max_nodes = args.max_nodes
    cfg.output_dir = args.out_dir
    if getattr(args, "instance", None):
        cfg.instance_file = args.instance
        cfg.case_id = "custom"
    if getattr(args, "scenarios", None):
        cfg.scenario_source = args.scenarios
    if getattr(args, "try_solve", False):
        cfg.try_solve = True
    return cfg


def _status_code(status: str) -> int:
    if status in ("optimal", "exported"):
        return EXIT_OK
    if status == LIMIT:
        return EXIT_LIMIT
    return EXIT_INFEASIBLE


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    try:
        rep = run_case(cfg)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if rep.tables:
        print(f"case {rep.case_id} ({rep.verification}):")
        for row in rep.tables:
            fc = f" fcrn={tuple(round(v, 3) for v in row['gen_fc'])} lambda_fc={row['lambda_fc']:.2f}" if row["fcrn"] else ""
            print(
                f"  {row['level']} {'w/ fc ' if row['fcrn'] else 'w/o fc'} "
                f"gen={tuple(round(v, 3) for v in row['gen_da'])} lambda_da={tuple(round(v, 2) for v in row['lambda_da'])}{fc}"
            )
        with open(out / f"case_{rep.case_id.lower()}_table.json", "w") as fh:
            json.dump(rep.tables, fh, indent=1, sort_keys=True)
    if rep.series:
        emit_plot_data(rep, "profile", out / f"case_{rep.case_id.lower()}_profile.csv")
    if rep.boxplot:
        emit_plot_data(rep, "boxplot", out / f"case_{rep.case_id.lower()}_boxplot.csv")
    if rep.pdfs:
        emit_plot_data(rep, "pdf", out / f"case_{rep.case_id.lower()}_pdf.csv")
    if rep.bid_curves:
        emit_plot_data(rep, "bidcurve", out / f"case_{rep.case_id.lower()}_bids.csv")
    if rep.decomposition:
        print("  objective decomposition:", {k: round(v, 2) for k, v in rep.decomposition.items()})
    if rep.export_path:
        print(f"  model exported to {rep.export_path}")
    print(f"  status={rep.status} wall_clock={rep.wall_clock:.2f}s")
    return _status_code(rep.status)


def cmd_sweep(args) -> int:
    rows = sweep_demand(args.kind, args.points, MilpOptions(abs_gap=args.gap, time_limit=args.time_limit))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_{args.kind}.csv"
    with open(path, "w", newline="") as fh:
        fh.write("demand,lambda_da,lambda_fc\n")
        for d, lda, lfc in rows:
            fh.write(f"{d!r},{lda!r},{lfc!r}\n")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _config_from_args(args)
    from . import cases as case_mod
    from .bilevel import build_single_level_milp

    if cfg.case_id == "custom":
        from .model import load_instance, load_scenarios

        ins = load_instance(cfg.instance_file)
        scens = load_scenarios(cfg.scenario_source)
    else:
        builder = case_mod.CASE_BUILDERS[cfg.case_id]
        if cfg.case_id == "V":
            ins, scens = builder(num_scenarios=args.num_scenarios, horizon=args.horizon)
        elif cfg.case_id in ("I", "II"):
            ins, scens = builder("M", with_fcrn=True)
        else:
            ins, scens = builder()
    prog = build_single_level_milp(ins, scens)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"case_{cfg.case_id.lower()}_milp.{args.format}"
    export_model(prog.mip, path, args.format)
    back = parse_model(path)
    print(f"wrote {path} ({back.lp.num_rows} rows, {back.lp.num_cols} cols, {len(back.binary)} binaries)")
    return EXIT_OK


def cmd_pdf(args) -> int:
    data = np.loadtxt(args.input, delimiter=",", skiprows=1)
    if data.ndim == 1:
        data = data[:, None]
    groups = {f"t{t}": data[:, t] for t in range(data.shape[1])}
    res = fit_price_pdfs(groups, draws=args.draws, warmup=args.warmup, seed=args.seed, thresholds=tuple(args.threshold))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "price_pdfs.csv"
    with open(path, "w", newline="") as fh:
        fh.write("group,grid,density\n")
        for label in sorted(res):
            g = res[label]
            for x, d in zip(g.grid, g.density):
                fh.write(f"{label},{float(x)!r},{float(d)!r}\n")
    for label in sorted(res):
        g = res[label]
        print(label, "normalization:", round(g.normalization, 6), g.threshold_probs)
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="hydrobid", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="solve a case study end to end")
    p.add_argument("--case", choices=("I", "II", "III", "IV", "V"), default="I")
    p.add_argument("--config", default=None, help="CaseConfig JSON file")
    p.add_argument("--instance", default=None, help="custom instance JSON")
    p.add_argument("--scenarios", default=None, help="custom scenario JSON")
    p.add_argument("--try-solve", action="store_true", help="case V: solve the reduced MILP in-process")
    _add_common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="demand sweep price curves")
    p.add_argument("--kind", choices=("da", "fcrn"), default="da")
    p.add_argument("--points", type=int, default=25)
    _add_common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("export", help="write the single-level MILP to a file")
    p.add_argument("--case", choices=("I", "II", "III", "IV", "V"), default="V")
    p.add_argument("--config", default=None)
    p.add_argument("--instance", default=None)
    p.add_argument("--scenarios", default=None)
    p.add_argument("--format", choices=("mps", "lp"), default="mps")
    p.add_argument("--num-scenarios", type=int, default=2)
    p.add_argument("--horizon", type=int, default=6)
    _add_common(p)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("pdf", help="fit posterior predictive price densities")
    p.add_argument("--input", required=True, help="CSV of samples, one column per group")
    p.add_argument("--draws", type=int, default=2000)
    p.add_argument("--warmup", type=int, default=500)
    p.add_argument("--threshold", type=float, action="append", default=[])
    _add_common(p)
    p.set_defaults(fn=cmd_pdf)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
