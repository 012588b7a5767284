import csv
import json
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from exp3cil import harness
from exp3cil.cli import run_cli
from exp3cil.errors import ComparisonError, ConfigError
from exp3cil.hyperspace import Action
from exp3cil.orchestrator import OrchestratorConfig

ROOT = Path(__file__).resolve().parents[1]
SMOKE = ROOT / "configs" / "smoke.cfg"

TINY = harness.ExperimentConfig(
    data=harness.DataSpec(total_classes=4, per_class_train=20, per_class_test=10),
    schedule=harness.ScheduleSpec(num_phases=2),
    grid={"beta": (0.0, 1.0), "gamma": (0.0, 5.0), "lambda": (0.05,), "delta": (0, 1)},
    orchestrator=OrchestratorConfig(T=3, M2=4, memory=3, phase0_epochs=5),
    seeds=(1, 2),
)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_cli_smoke_run(tmp_path):
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "exp3cil", "run", "--config", str(SMOKE), "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert time.perf_counter() - t0 < 60
    assert (tmp_path / "summary.json").is_file() and (tmp_path / "phases.csv").is_file()
    rows = _read_csv(tmp_path / "phases.csv")
    assert list(rows[0]) == list(harness.PHASES_COLUMNS)
    # both settings, N=2: TFH has 3 phases, TFS has 2
    assert len(rows) == 5


def test_cli_missing_config(tmp_path, capsys):
    missing = tmp_path / "nope.cfg"
    assert run_cli(["run", "--config", str(missing)]) != 0
    assert str(missing) in capsys.readouterr().err


def test_cli_unknown_flag():
    with pytest.raises(SystemExit) as info:
        run_cli(["run", "--config", str(SMOKE), "--bogus"])
    assert info.value.code != 0


def test_cli_fixed_mode(tmp_path):
    code = run_cli(["run", "--config", str(SMOKE), "--mode", "fixed", "--setting", "tfs", "--beta", "1",
                    "--gamma", "0", "--lambda", "0.05", "--delta", "1", "--out", str(tmp_path)])
    assert code == 0
    rows = _read_csv(tmp_path / "phases.csv")
    incremental = [r for r in rows if r["phase"] != "0"]
    assert {(r["chosen_beta"], r["chosen_gamma"], r["chosen_lambda"], r["chosen_delta"]) for r in incremental} == {
        ("1.0", "0.0", "0.05", "1")
    }
    assert json.loads((tmp_path / "summary.json").read_text())["method"].startswith("fixed(")


def test_load_config_values_and_errors(tmp_path):
    cfg = harness.load_config(SMOKE)
    assert cfg.data.total_classes == 4 and cfg.schedule.num_phases == 2
    assert cfg.orchestrator.T == 5 and cfg.orchestrator.M1 == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("[orchestrator]\nT = many\n")
    with pytest.raises(ConfigError):
        harness.load_config(bad)
    bad.write_text("[mystery]\nx = 1\n")
    with pytest.raises(ConfigError):
        harness.load_config(bad)


def test_summary_statistics_integrity():
    s = harness.run_matrix(TINY)
    for setting in ("tfh", "tfs"):
        st = s["settings"][setting]
        avgs = [np.mean(v["accuracies"]) for v in st["per_seed"].values()]
        assert st["mean"] == float(np.mean(avgs))
        assert st["std"] == float(np.std(avgs, ddof=1))
    assert s["avg"]["mean"] == float(np.mean(list(s["avg"]["per_seed"].values())))
    assert s["protocol"]["premature_test_reads"] == 0
    assert s["config"]["orchestrator"]["xi"] == 0.1  # defaults are recorded


def test_summary_reproducible_and_parallel():
    a = harness.run_matrix(TINY)
    b = harness.run_matrix(replace(TINY, workers=2))
    a.pop("elapsed_seconds"), b.pop("elapsed_seconds")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_fixed_equals_single_action_online():
    action = Action(1.0, 0.0, 0.05, 1)
    fixed = harness.run_matrix(replace(TINY, mode="fixed", baseline=action))
    single = {"beta": (1.0,), "gamma": (0.0,), "lambda": (0.05,), "delta": (1,)}
    online = harness.run_matrix(replace(TINY, mode="online", grid=single))
    assert fixed["settings"] == online["settings"]


def test_ablation_freezes_other_dimensions():
    space, _, label = harness.resolve_space(replace(TINY, mode="ablation", ablation=("gamma",)))
    assert label == "ablation(gamma)"
    assert {a.beta for a in space} == {TINY.baseline.beta}
    assert {a.gamma for a in space} == set(TINY.grid["gamma"])


def test_grid_search_single_action():
    cfg = replace(TINY, grid={"beta": (1.0,), "gamma": (0.0,), "lambda": (0.05,), "delta": (1,)}, seeds=(1,))
    out = harness.grid_search_fixed(cfg)
    assert out["action"] == Action(1.0, 0.0, 0.05, 1)
    assert len(out["candidates"]) == 1


def test_grid_search_dominant_action():
    # a near-zero learning rate cannot learn the new classes
    cfg = replace(TINY, grid={"beta": (0.0,), "gamma": (0.0,), "lambda": (1e-6, 0.05), "delta": (0,)})
    out = harness.grid_search_fixed(cfg)
    assert out["action"].lam == 0.05
    assert len(out["candidates"]) == 2
    assert out["summary"]["method"] == "cross-val-fixed"
    assert out["summary"]["grid_search"]["candidates"] == out["candidates"]


def _hand_summary(method, tfh, tfs):
    settings = {
        k: {"per_seed": {"1": {"accuracies": [v, v], "average": v}}, "mean": v, "std": 0.0}
        for k, v in (("tfh", tfh), ("tfs", tfs))
    }
    return {"method": method, "provenance": {"data": "x"}, "settings": settings,
            "avg": {"mean": (tfh + tfs) / 2, "std": 0.0}}


def test_compare_report_hand_numbers(tmp_path):
    report = harness.compare_report([_hand_summary("a", 0.8, 0.6), _hand_summary("b", 0.5, 0.9)], tmp_path)
    assert [r["avg_mean"] for r in report["rows"]] == [pytest.approx(0.7), pytest.approx(0.7)]
    parsed = _read_csv(tmp_path / "comparison.csv")
    for row, orig in zip(parsed, report["rows"]):
        for k, v in orig.items():
            assert (row[k] if k == "method" else float(row[k])) == v
    assert len(_read_csv(tmp_path / "curves.csv")) == 2 * 2 * 2


def test_compare_single_summary_and_mismatch():
    s = _hand_summary("a", 0.8, 0.6)
    (row,) = harness.compare_report([s])["rows"]
    assert row["tfh_mean"] == 0.8 and row["tfs_mean"] == 0.6
    other = dict(_hand_summary("b", 0.5, 0.5), provenance={"data": "y"})
    with pytest.raises(ComparisonError):
        harness.compare_report([s, other])


def test_cli_compare(tmp_path):
    for name, vals in (("a", (0.8, 0.6)), ("b", (0.5, 0.9))):
        (tmp_path / f"{name}.json").write_text(json.dumps(_hand_summary(name, *vals)))
    code = run_cli(["compare", str(tmp_path / "a.json"), str(tmp_path / "b.json"), "--out", str(tmp_path / "cmp")])
    assert code == 0
    assert (tmp_path / "cmp" / "comparison.json").is_file()
