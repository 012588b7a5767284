"""Experiment matrix runner: configuration, baselines, ablations and reports."""

from __future__ import annotations

import configparser
import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .datastream import TFH, TFS, load_csv, make_schedule, split_by_schedule, synth_generate
from .errors import ComparisonError, ConfigError
from .hyperspace import DEFAULT_GRID, Action, ActionSpace, build_grid
from .orchestrator import FIXED, ONLINE, OrchestratorConfig, run_experiment

log = logging.getLogger(__name__)

MODES = ("online", "fixed", "grid-search", "ablation")
PHASES_COLUMNS = (
    "method", "setting", "seed", "phase", "accuracy",
    "chosen_beta", "chosen_gamma", "chosen_lambda", "chosen_delta",
)
TRACE_COLUMNS = (
    "method", "setting", "seed", "phase", "iteration", "action_index",
    "beta", "gamma", "lambda", "delta", "prob", "reward", "reward_full",
)
ABLATION_DIMS = ("beta", "gamma", "lambda", "delta")


@dataclass(frozen=True)
class DataSpec:
    source: str = "synthetic"
    total_classes: int = 20
    dim: int = 16
    per_class_train: int = 60
    per_class_test: int = 40
    separation: float = 5.0
    data_seed: Optional[int] = None  # None -> reuse the run seed
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None


@dataclass(frozen=True)
class ScheduleSpec:
    num_phases: int = 5
    setting: str = "both"
    class_order_seed: Optional[int] = None

    @property
    def settings(self) -> tuple[str, ...]:
        return (TFH, TFS) if self.setting == "both" else (self.setting,)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSpec = field(default_factory=DataSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    grid: dict = field(default_factory=lambda: {k: tuple(v) for k, v in DEFAULT_GRID.items()})
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)
    baseline: Action = Action(0.0, 5.0, 0.05, 0)
    seeds: tuple[int, ...] = (1,)
    mode: str = "online"
    ablation: tuple[str, ...] = ("beta", "gamma")
    workers: int = 1
    name: Optional[str] = None

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.schedule.setting not in (TFH, TFS, "both"):
            raise ConfigError(f"unknown setting {self.schedule.setting!r}")
        bad = set(self.ablation) - set(ABLATION_DIMS)
        if bad:
            raise ConfigError(f"unknown ablation dimensions {sorted(bad)}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def as_dict(self) -> dict:
        return {
            "data": asdict(self.data),
            "schedule": asdict(self.schedule),
            "grid": {k: list(v) for k, v in self.grid.items()},
            "orchestrator": self.orchestrator.as_dict(),
            "baseline": self.baseline.as_dict(),
            "seeds": list(self.seeds),
            "mode": self.mode,
            "ablation": list(self.ablation),
            "name": self.name,
        }


# -- config file ----------------------------------------------------------------


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _optional_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


_DATA_TYPES = {
    "source": str, "total_classes": int, "dim": int, "per_class_train": int, "per_class_test": int,
    "separation": float, "data_seed": _optional_int, "train_csv": str, "test_csv": str,
}
_SCHEDULE_TYPES = {"num_phases": int, "setting": str.lower, "class_order_seed": _optional_int}
_ORCH_TYPES = {
    "T": int, "n": int, "M2": int, "M1": _optional_int, "b": int, "policy_update_period": int,
    "batch_size": int, "memory": int, "tau": float, "xi": float, "mix": float,
    "phase0_epochs": int, "phase0_lr": float, "arch": _ints, "scale": float,
}


def _section(parser, name, types, path):
    out = {}
    if not parser.has_section(name):
        return out
    for key, raw in parser.items(name):
        # configparser lowercases keys; map back onto the declared spelling
        match = next((k for k in types if k.lower() == key), None)
        if match is None:
            raise ConfigError(f"{path}: unknown key {key!r} in [{name}]")
        try:
            out[match] = types[match](raw)
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for {name}.{key}: {exc}") from None
    return out


def load_config(path) -> ExperimentConfig:
    """Parse an INI-style config. Missing keys fall back to defaults."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known = {"experiment", "data", "schedule", "grid", "orchestrator", "baseline"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")

    data = DataSpec(**_section(parser, "data", _DATA_TYPES, path))
    schedule = ScheduleSpec(**_section(parser, "schedule", _SCHEDULE_TYPES, path))
    grid = {k: tuple(v) for k, v in DEFAULT_GRID.items()}
    grid_raw = _section(parser, "grid", {"beta": _floats, "gamma": _floats, "lambda": _floats, "delta": _ints}, path)
    grid.update(grid_raw)
    try:
        orch = OrchestratorConfig(**_section(parser, "orchestrator", _ORCH_TYPES, path))
        base = _section(parser, "baseline", {"beta": float, "gamma": float, "lambda": float, "delta": int}, path)
        default_base = ExperimentConfig.baseline
        baseline = Action(
            base.get("beta", default_base.beta), base.get("gamma", default_base.gamma),
            base.get("lambda", default_base.lam), base.get("delta", default_base.delta),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    exp = _section(
        parser, "experiment",
        {"mode": str.lower, "seeds": _ints, "workers": int, "ablation": lambda s: tuple(s.replace(",", " ").split()),
         "name": str},
        path,
    )
    return ExperimentConfig(data=data, schedule=schedule, grid=grid, orchestrator=orch, baseline=baseline, **exp)


# -- running ------------------------------------------------------------------------


def resolve_space(config: ExperimentConfig, action: Optional[Action] = None) -> tuple[ActionSpace, str, str]:
    """Action space, orchestrator mode and method label for a config."""
    g = config.grid
    if config.mode == "online":
        return build_grid(g["beta"], g["gamma"], g["lambda"], g["delta"], min_size=1), ONLINE, "online"
    if config.mode == "ablation":
        base = config.baseline.as_dict()
        dims = [g[d] if d in config.ablation else (base[d],) for d in ABLATION_DIMS]
        label = "ablation(" + ",".join(d for d in ABLATION_DIMS if d in config.ablation) + ")"
        return build_grid(*dims, min_size=1), ONLINE, label
    a = action or config.baseline
    label = f"fixed(beta={a.beta:g},gamma={a.gamma:g},lambda={a.lam:g},delta={a.delta})"
    return build_grid([a.beta], [a.gamma], [a.lam], [a.delta], min_size=1), FIXED, label


def make_data(config: ExperimentConfig, setting: str, seed: int):
    spec = config.data
    schedule = make_schedule(spec.total_classes, config.schedule.num_phases, setting, config.schedule.class_order_seed)
    if spec.source == "synthetic":
        data_seed = seed if spec.data_seed is None else spec.data_seed
        sets = synth_generate(schedule, spec.per_class_train, spec.per_class_test, spec.dim, spec.separation, data_seed)
    elif spec.source == "csv":
        if not spec.train_csv or not spec.test_csv:
            raise ConfigError("csv data source needs train_csv and test_csv")
        train = load_csv(spec.train_csv, spec.dim)
        test = load_csv(spec.test_csv, spec.dim)
        sets = (split_by_schedule(train, schedule), split_by_schedule(test, schedule))
    else:
        raise ConfigError(f"unknown data source {spec.source!r}")
    return schedule, sets


def run_job(config: ExperimentConfig, space: ActionSpace, orch_mode: str, setting: str, seed: int) -> dict:
    schedule, sets = make_data(config, setting, seed)
    result = run_experiment(schedule, sets, config.orchestrator, space, seed, mode=orch_mode)
    return {
        "setting": setting,
        "seed": seed,
        "schedule": schedule.provenance(),
        "accuracies": result.accuracies,
        "phases": [p.to_dict() for p in result.phases],
        "ledger": list(result.ledger.rewards),
        "premature_test_reads": result.premature_test_reads,
    }


def _star_job(args):
    return run_job(*args)


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return {"mean": float(np.mean(v)), "std": std}


def summarize(config: ExperimentConfig, space: ActionSpace, method: str, jobs: list[dict], elapsed: float) -> dict:
    jobs = sorted(jobs, key=lambda j: (j["setting"], j["seed"]))
    settings = {}
    for s in config.schedule.settings:
        per_seed = {
            str(j["seed"]): {"accuracies": j["accuracies"], "average": float(np.mean(j["accuracies"]))}
            for j in jobs if j["setting"] == s
        }
        settings[s] = {"per_seed": per_seed, **_stats([v["average"] for v in per_seed.values()])}
    summary = {
        "method": method,
        "config": config.as_dict(),
        "actions": space.to_list(),
        "provenance": {
            "data": asdict(config.data),
            "schedules": {j["setting"]: j["schedule"] for j in jobs},
        },
        "settings": settings,
    }
    if len(settings) == 2:
        per_seed_avg = {
            str(seed): (settings[TFH]["per_seed"][str(seed)]["average"] + settings[TFS]["per_seed"][str(seed)]["average"]) / 2
            for seed in sorted(config.seeds)
        }
        summary["avg"] = {"per_seed": per_seed_avg, **_stats(list(per_seed_avg.values()))}
    summary["protocol"] = {"premature_test_reads": int(sum(j["premature_test_reads"] for j in jobs))}
    summary["jobs"] = jobs
    summary["elapsed_seconds"] = elapsed
    return summary


def run_matrix(config: ExperimentConfig, action: Optional[Action] = None) -> dict:
    """Run every (setting, seed) pair for the config's mode and return the summary dict."""
    if config.mode == "grid-search":
        return grid_search_fixed(config)["summary"]
    space, orch_mode, method = resolve_space(config, action)
    t0 = time.perf_counter()
    args = [(config, space, orch_mode, s, seed) for s in config.schedule.settings for seed in config.seeds]
    if config.workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            jobs = list(pool.map(_star_job, args))
    else:
        jobs = [_star_job(a) for a in args]
    summary = summarize(config, space, method, jobs, time.perf_counter() - t0)
    log.info("%s: %s", method, {s: round(v["mean"], 4) for s, v in summary["settings"].items()})
    return summary


def headline(summary: dict) -> float:
    """TFH/TFS average when both settings ran, otherwise the single setting's mean."""
    if "avg" in summary:
        return summary["avg"]["mean"]
    (only,) = summary["settings"].values()
    return only["mean"]


def grid_search_fixed(config: ExperimentConfig) -> dict:
    """Score every grid action as a fixed policy for all phases; return the best.

    This baseline is allowed to look at the held-out accuracy, so it is an
    optimistic reference. Ties go to the lowest action index.
    """
    g = config.grid
    space = build_grid(g["beta"], g["gamma"], g["lambda"], g["delta"], min_size=1)
    fixed_cfg = replace(config, mode="fixed")
    candidates, best, best_summary = [], None, None
    for idx, action in enumerate(space):
        s = run_matrix(fixed_cfg, action)
        score = headline(s)
        candidates.append({"index": idx, "action": action.as_dict(), "score": score})
        if best is None or score > best[1]:
            best, best_summary = (idx, score), s
    idx = best[0]
    best_summary = dict(best_summary)
    best_summary["method"] = "cross-val-fixed"
    best_summary["grid_search"] = {"best_index": idx, "best_action": space.actions[idx].as_dict(), "candidates": candidates}
    return {"action": space.actions[idx], "summary": best_summary, "candidates": candidates}


# -- outputs ----------------------------------------------------------------------


def phase_rows(summary: dict) -> list[dict]:
    rows = []
    for job in summary["jobs"]:
        for p in job["phases"]:
            a = p["action"]
            rows.append({
                "method": summary["method"], "setting": job["setting"], "seed": job["seed"], "phase": p["phase"],
                "accuracy": p["accuracy"], "chosen_beta": a["beta"], "chosen_gamma": a["gamma"],
                "chosen_lambda": a["lambda"], "chosen_delta": a["delta"],
            })
    return rows


def trace_rows(summary: dict) -> list[dict]:
    actions = summary["actions"]
    rows = []
    for job in summary["jobs"]:
        for p in job["phases"]:
            for it in p["trace"]:
                a = actions[it["action_index"]]
                rows.append({
                    "method": summary["method"], "setting": job["setting"], "seed": job["seed"], "phase": p["phase"],
                    "iteration": it["iteration"], "action_index": it["action_index"], "beta": a["beta"],
                    "gamma": a["gamma"], "lambda": a["lambda"], "delta": a["delta"], "prob": it["prob"],
                    "reward": it["reward"], "reward_full": it["reward_full"],
                })
    return rows


def _write_csv(path: Path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_outputs(summary: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    _write_csv(out / "phases.csv", PHASES_COLUMNS, phase_rows(summary))
    _write_csv(out / "trace.csv", TRACE_COLUMNS, trace_rows(summary))
    return out


def compare_report(summaries: list[dict], out_dir=None) -> dict:
    """One row per method with TFH / TFS / Avg mean and std, plus per-phase curves."""
    if not summaries:
        raise ComparisonError("nothing to compare")
    ref = summaries[0]["provenance"]
    for s in summaries[1:]:
        if s["provenance"] != ref:
            raise ComparisonError(f"{s['method']} was run on different data or schedules than {summaries[0]['method']}")
    rows, curves = [], []
    for s in summaries:
        row = {"method": s["method"]}
        for key in (TFH, TFS):
            st = s["settings"].get(key)
            row[f"{key}_mean"] = st["mean"] if st else None
            row[f"{key}_std"] = st["std"] if st else None
        row["avg_mean"] = s["avg"]["mean"] if "avg" in s else None
        row["avg_std"] = s["avg"]["std"] if "avg" in s else None
        rows.append(row)
        for setting, st in s["settings"].items():
            per_phase = np.array([v["accuracies"] for v in st["per_seed"].values()], dtype=float)
            for phase, (m, sd) in enumerate(zip(per_phase.mean(axis=0), per_phase.std(axis=0))):
                curves.append({"method": s["method"], "setting": setting, "phase": phase,
                               "mean_accuracy": float(m), "std_accuracy": float(sd)})
    report = {"rows": rows, "curves": curves}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cols = ("method", "tfh_mean", "tfh_std", "tfs_mean", "tfs_std", "avg_mean", "avg_std")
        _write_csv(out / "comparison.csv", cols, [{k: ("" if v is None else v) for k, v in r.items()} for r in rows])
        _write_csv(out / "curves.csv", ("method", "setting", "phase", "mean_accuracy", "std_accuracy"), curves)
        (out / "comparison.json").write_text(json.dumps(report, indent=2))
    return report
