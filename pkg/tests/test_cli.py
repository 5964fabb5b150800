import csv
import json
import subprocess
import sys

import pytest

from vppcoop.cli import main
from vppcoop.scenario import demo_scenario_path, generate_synthetic


@pytest.fixture(scope="module")
def small_scenario(tmp_path_factory):
    path = tmp_path_factory.mktemp("scen") / "small.json"
    generate_synthetic(5, 2, 6).save(path)
    return str(path)


def test_pipeline_summary_and_exit(small_scenario, tmp_path, capsys):
    code = main(["pipeline", small_scenario, "--out", str(tmp_path / "run")])
    out = capsys.readouterr().out
    assert code == 0
    assert "Independent" in out and "Cooperative" in out
    assert (tmp_path / "run" / "manifest.json").exists()


def test_pipeline_cooperative_dominates(small_scenario, capsys):
    code = main(["pipeline", small_scenario, "--json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["cooperative"]["objective"] <= payload["independent_total"] + 1e-9
    assert payload["savings"] >= -1e-9


def test_pipeline_iteration_limit_exit_code(small_scenario, tmp_path, capsys):
    code = main(
        ["pipeline", small_scenario, "--max-iters", "1", "--out", str(tmp_path / "run")]
    )
    capsys.readouterr()
    assert code == 4
    with open(tmp_path / "run" / "trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1  # partial trace still written


def test_beta_below_half_rejected(small_scenario, capsys):
    code = main(["pipeline", small_scenario, "--beta", "0.4"])
    err = capsys.readouterr().err
    assert code == 2
    assert "beta" in err


def test_missing_scenario_is_usage_error(capsys):
    code = main(["pipeline", "/nonexistent.json"])
    assert code == 2


def test_solve_independent_json(small_scenario, capsys):
    code = main(["solve-independent", small_scenario, "--json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert set(payload["independent"]) == {"vpp1", "vpp2"}


def test_solve_coop_writes_artifacts(small_scenario, tmp_path, capsys):
    code = main(["solve-coop", small_scenario, "--out", str(tmp_path), "--json"])
    payload = json.loads(capsys.readouterr().out)
    assert code == 0
    assert payload["status"] == "converged"
    assert (tmp_path / "trace.csv").exists()
    assert (tmp_path / "migration.csv").exists()


def test_allocate_reports_solve_count(small_scenario, capsys):
    code = main(["allocate", small_scenario])
    out = capsys.readouterr().out
    assert code == 0
    assert "characteristic solves: 3" in out  # N + 1 with N = 2


def test_validate_passes_on_generated_scenario(small_scenario, capsys):
    code = main(["validate", small_scenario])
    out = capsys.readouterr().out
    assert code == 0
    assert "FAIL" not in out
    assert "admm_centralized_gap" in out


def test_validate_reports_tampered_scenario(tmp_path, capsys):
    data = json.loads(demo_scenario_path().read_text())
    data["network"]["distance"][0][1] = 1.0  # break symmetry
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    code = main(["validate", str(bad)])
    out = capsys.readouterr().out
    assert code == 1
    assert "FAIL scenario-load" in out
    assert "asymmetric" in out


def test_bench_counts(tmp_path, capsys):
    out_csv = tmp_path / "bench.csv"
    code = main(["bench", "--n-range", "2:3", "--t", "4", "--out", str(out_csv)])
    capsys.readouterr()
    assert code == 0
    with open(out_csv) as fh:
        rows = list(csv.DictReader(fh))
    counts = {(int(r["n"]), r["mode"]): int(r["solves"]) for r in rows}
    assert counts[(2, "allocation_improved")] == 3
    assert counts[(3, "allocation_improved")] == 4
    assert counts[(2, "allocation_shapley")] == 3
    assert counts[(3, "allocation_shapley")] == 7


def test_bench_bad_range(capsys):
    assert main(["bench", "--n-range", "5:2"]) == 2
    assert main(["bench", "--n-range", "abc"]) == 2


def test_console_entry_point(small_scenario):
    proc = subprocess.run(
        [sys.executable, "-m", "vppcoop.cli", "solve-independent", small_scenario, "--json"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["total"] > 0


def test_deterministic_outputs(small_scenario, capsys):
    main(["pipeline", small_scenario, "--json"])
    first = capsys.readouterr().out
    main(["pipeline", small_scenario, "--json"])
    second = capsys.readouterr().out
    assert first == second


def test_bench_improved_counts_grow_linearly(tmp_path):
    out_csv = tmp_path / "bench.csv"
    code = main(["bench", "--n-range", "2:5", "--t", "4", "--out", str(out_csv)])
    assert code == 0
    with open(out_csv) as fh:
        rows = [r for r in csv.DictReader(fh) if r["mode"] == "allocation_improved"]
    ns = [int(r["n"]) for r in rows]
    solves = [int(r["solves"]) for r in rows]
    slope, intercept = __import__("numpy").polyfit(ns, solves, 1)
    fitted = [slope * n + intercept for n in ns]
    ss_res = sum((s - f) ** 2 for s, f in zip(solves, fitted))
    ss_tot = sum((s - sum(solves) / len(solves)) ** 2 for s in solves)
    r_squared = 1.0 - ss_res / ss_tot
    assert r_squared >= 0.9
    # the exponential rule doubles (plus one) per added site
    with open(out_csv) as fh:
        shap = {int(r["n"]): int(r["solves"]) for r in csv.DictReader(fh)
                if r["mode"] == "allocation_shapley"}
    for n in range(2, 5):
        assert shap[n] == 2 ** n - 1
