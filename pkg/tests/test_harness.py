"""Case drivers and the command line: table reproduction, plot-data files,
exit codes and byte-level reproducibility."""
import json

import numpy as np
import pytest

from hydrobid.cases import case_iii
from hydrobid.cli import main
from hydrobid.harness import CaseConfig, CaseReport, emit_plot_data, run_case, sweep_demand
from hydrobid.model import save_instance, save_scenarios


def test_case_config_validation(tmp_path):
    with pytest.raises(ValueError, match="unknown case id"):
        CaseConfig(case_id="VI")
    with pytest.raises(ValueError, match="instance file"):
        CaseConfig(case_id="custom")
    cfg = CaseConfig(case_id="I")
    assert cfg.milp_options().abs_gap == 1e-6
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"case_id": "II", "gap": 1e-5}))
    assert CaseConfig.from_json(path).case_id == "II"


def test_run_case_i_reproduces_all_rows():
    rep = run_case(CaseConfig(case_id="I"))
    assert rep.verification == "all-pass"
    assert len(rep.tables) == 6
    by_key = {(r["level"], r["fcrn"]): r for r in rep.tables}
    assert by_key[("H", False)]["gen_da"] == pytest.approx((20.0, 50.0, 100.0), abs=1e-4)
    assert by_key[("H", False)]["lambda_da"] == pytest.approx((200.0,) * 3, abs=1e-4)
    assert by_key[("M", True)]["gen_fc"] == pytest.approx((15.0, 0.0, 5.0), abs=1e-4)
    assert by_key[("M", True)]["lambda_fc"] == pytest.approx(100.0, abs=1e-4)
    # reported prices come from the stored clearing records, no drift
    sol = rep.solutions[3]  # first with-reserve row (L)
    assert sol.fc_results[0].duals["lambda_fc"][0] == by_key[("L", True)]["lambda_fc"]


def test_run_case_iii_series_and_bidcurves(tmp_path):
    rep = run_case(CaseConfig(case_id="III", output_dir=str(tmp_path)))
    assert rep.status == "optimal"
    assert rep.series["lambda_da"] == pytest.approx([48.0, 200.0, 200.0], abs=1e-4)
    assert rep.series["lambda_fc"] == pytest.approx([50.0, 100.0, 50.0], abs=1e-4)
    assert rep.series["id_buy"][0] == pytest.approx(30.0, abs=1e-4)
    assert rep.series["id_sell"][1] == pytest.approx(15.0, abs=1e-4)
    emit_plot_data(rep, "profile", tmp_path / "p.csv")
    emit_plot_data(rep, "bidcurve", tmp_path / "b.csv")
    header = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert header.startswith("period,")
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 4  # header + 3 periods


def test_sweep_da_plateaus():
    rows = sweep_demand("da", 13)
    lams = [l for _, l, _ in rows if l == l]
    plateaus = sorted(set(round(l, 4) for l in lams))
    assert plateaus == [0.0, 15.0, 200.0]
    # breakpoints within one grid step of 50 and 150 MW total demand
    step = rows[1][0] - rows[0][0]
    for target in (50.0, 150.0):
        jumps = [d for (d0, l0, _), (d, l, _) in zip(rows, rows[1:]) if l == l and l0 == l0 and l != l0 and d0 <= target + step]
        assert any(abs(d - target) <= step or abs(d - step - target) <= step for d in jumps)


def test_sweep_fcrn_plateaus():
    rows = sweep_demand("fcrn", 13)
    plateaus = sorted(set(round(l, 4) for _, _, l in rows))
    assert plateaus == [30.0, 100.0]
    step = rows[1][0] - rows[0][0]
    jump = next(d for (d0, _, l0), (d, _, l) in zip(rows, rows[1:]) if l != l0)
    assert abs(jump - 50.0) <= step
    with pytest.raises(ValueError):
        sweep_demand("bogus", 3)


def test_emit_plot_data_errors(tmp_path):
    rep = CaseReport(case_id="I", status="optimal")
    for kind in ("profile", "boxplot", "pdf", "bidcurve"):
        with pytest.raises(ValueError):
            emit_plot_data(rep, kind, tmp_path / "x.csv")
    with pytest.raises(ValueError, match="unknown plot kind"):
        emit_plot_data(rep, "heatmap", tmp_path / "x.csv")


def test_cli_run_case_i(tmp_path, capsys):
    code = main(["run", "--case", "I", "--out-dir", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "all-pass" in out
    table = json.loads((tmp_path / "case_i_table.json").read_text())
    assert len(table) == 6


def test_cli_sweep_writes_deterministic_csv(tmp_path):
    assert main(["sweep", "--kind", "fcrn", "--points", "7", "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["sweep", "--kind", "fcrn", "--points", "7", "--out-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "sweep_fcrn.csv").read_bytes()
    b = (tmp_path / "b" / "sweep_fcrn.csv").read_bytes()
    assert a == b
    assert a.startswith(b"demand,lambda_da,lambda_fc")


def test_cli_export_round_trips(tmp_path, capsys):
    code = main(["export", "--case", "I", "--format", "mps", "--out-dir", str(tmp_path)])
    assert code == 0
    from hydrobid.lp import parse_model

    back = parse_model(tmp_path / "case_i_milp.mps")
    assert back.lp.num_rows > 0 and back.binary


def test_cli_custom_case_and_infeasible_exit(tmp_path, capsys):
    ins, scens = case_iii()
    save_instance(ins, tmp_path / "ins.json")
    save_scenarios(scens, tmp_path / "sc.json")
    code = main(
        ["run", "--instance", str(tmp_path / "ins.json"), "--scenarios", str(tmp_path / "sc.json"), "--out-dir", str(tmp_path)]
    )
    assert code == 0
    # over-demand makes the problem infeasible: exit code 3
    for s in scens:
        s.demand_da *= 50.0
    save_scenarios(scens, tmp_path / "bad.json")
    code = main(
        ["run", "--instance", str(tmp_path / "ins.json"), "--scenarios", str(tmp_path / "bad.json"), "--out-dir", str(tmp_path)]
    )
    assert code == 3


def test_cli_pdf_subcommand(tmp_path, capsys):
    rng = np.random.default_rng(0)
    data = np.column_stack([rng.normal(30, 5, 60), rng.normal(12, 2, 60)])
    np.savetxt(tmp_path / "samples.csv", data, delimiter=",", header="a,b", comments="")
    code = main(
        [
            "pdf",
            "--input",
            str(tmp_path / "samples.csv"),
            "--draws",
            "300",
            "--warmup",
            "150",
            "--threshold",
            "20",
            "--out-dir",
            str(tmp_path),
        ]
    )
    assert code == 0
    assert (tmp_path / "price_pdfs.csv").exists()
    assert "normalization" in capsys.readouterr().out
