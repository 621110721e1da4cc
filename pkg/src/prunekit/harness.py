"""Experiment configuration, dispatch and result files.

A run takes one ``ExperimentConfig`` (JSON document), writes CSV results to
``out_dir`` and finishes with a ``manifest.json`` that echoes the config so
the run can be repeated exactly.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .linear_lab import RecoveryTrialConfig, recovery_experiment
from .pruning import MaskHistory, regrown_series
from .schedules import dump_rows, schedule_from_dict
from .seeding import seed_stream
from .tiny_net import (
    ABLATION_KINDS,
    METHODS,
    PruneRecipe,
    cycle_ablation,
    pretrained_blobs_model,
    prune_train,
)

__all__ = ["ExperimentConfig", "ConfigError", "RunManifest", "run", "seed_stream", "load_config"]

logger = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("schedule_dump", "linear_sim", "prune_train", "ablate")

LINEAR_COLUMNS = ["d", "n", "alpha_mode", "trials", "p_oneshot", "p_pgd", "ci_oneshot", "ci_pgd"]
TRACE_COLUMNS = ["t", "loss", "sparsity", "lr", "regrown_fraction"]
CYCLE_COLUMNS = ["cycle", "accuracy", "mask_jaccard", "regrown_fraction"]


class ConfigError(ValueError):
    """Invalid experiment configuration; raised before any computation."""


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    out_dir: str = "results"
    jobs: int = 1
    params: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "kind" not in data:
            raise ConfigError("config needs a 'kind'")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def validate(self) -> None:
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"kind must be one of {EXPERIMENT_KINDS}, got {self.kind!r}")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        try:
            _BUILDERS[self.kind](self)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid {self.kind} parameters: {exc}") from exc


def load_config(path: str | os.PathLike) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# Sub-config builders: turn ``params`` into typed objects, raising on bad input.

def _schedule_plan(cfg: ExperimentConfig):
    p = cfg.params
    total = int(p["total_iters"])
    if total < 1:
        raise ConfigError("total_iters must be >= 1")
    sparsity = schedule_from_dict(p["sparsity"]) if p.get("sparsity") else None
    lr = schedule_from_dict(p["lr"]) if p.get("lr") else None
    if sparsity is None and lr is None:
        raise ConfigError("schedule_dump needs a 'sparsity' and/or 'lr' schedule")
    for sched in (sparsity, lr):
        if sched is not None and sched.total_iters < total:
            raise ConfigError("schedule horizon shorter than total_iters")
    return total, sparsity, lr


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _linear_plan(cfg: ExperimentConfig) -> list[RecoveryTrialConfig]:
    p = dict(cfg.params)
    ns = _as_list(p.pop("n", 4))
    modes = _as_list(p.pop("alpha_mode", "random"))
    p.pop("seed", None)
    allowed = {f.name for f in fields(RecoveryTrialConfig)} - {"n", "alpha_mode", "seed"}
    unknown = set(p) - allowed
    if unknown:
        raise ConfigError(f"unknown linear_sim keys {sorted(unknown)}")
    return [RecoveryTrialConfig(n=int(n), alpha_mode=mode, seed=cfg.seed, **p)
            for n, mode in itertools.product(ns, modes)]


def _recipe(p: dict[str, Any]) -> PruneRecipe:
    return PruneRecipe(**p.get("recipe", {}))


def _prune_plan(cfg: ExperimentConfig):
    p = cfg.params
    methods = _as_list(p.get("method", list(METHODS)))
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
    s_t = float(p.get("s_t", 0.95))
    if not 0 <= s_t <= 1:
        raise ConfigError("s_t must lie in [0, 1]")
    seeds = [int(s) for s in _as_list(p.get("seeds", [cfg.seed]))]
    return methods, s_t, seeds, _recipe(p)


def _ablate_plan(cfg: ExperimentConfig):
    p = cfg.params
    kinds = _as_list(p.get("kind", list(ABLATION_KINDS)))
    for k in kinds:
        if k not in ABLATION_KINDS:
            raise ConfigError(f"unknown ablation kind {k!r}; expected one of {ABLATION_KINDS}")
    k = int(p.get("k", 5))
    if k < 2:
        raise ConfigError("ablation needs k >= 2")
    s_t = float(p.get("s_t", 0.9))
    if not 0 <= s_t <= 1:
        raise ConfigError("s_t must lie in [0, 1]")
    return kinds, k, s_t, _recipe(p)


_BUILDERS = {
    "schedule_dump": _schedule_plan,
    "linear_sim": _linear_plan,
    "prune_train": _prune_plan,
    "ablate": _ablate_plan,
}


@dataclass
class RunManifest:
    config: dict[str, Any]
    version: str
    status: str
    duration_s: float
    summary: dict[str, Any]
    outputs: list[str]
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig.from_dict(self.config)


def _fmt(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows, append: bool = False) -> None:
    """Write rows with '.' decimals, LF endings and round-trippable floats."""
    exists = append and path.exists() and path.stat().st_size > 0
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not exists:
            w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json_atomic(path: Path, payload: dict[str, Any]) -> None:
    fd, tmp = tempfile.mkstemp(prefix=".manifest-", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trace_rows(trace: list[dict], history: MaskHistory) -> list[list]:
    """Per-iteration rows; regrown fraction is that of the latest snapshot."""
    series = dict(zip(history.iterations, regrown_series(history)))
    rows, current = [], ""
    for rec in trace:
        if rec["t"] in series:
            current = series[rec["t"]]
        rows.append([rec["t"], rec["loss"], rec["sparsity"], rec["lr"], current])
    return rows


def _run_schedule_dump(cfg: ExperimentConfig, out: Path, outputs: list[str]) -> dict[str, Any]:
    total, sparsity, lr = _schedule_plan(cfg)
    path = out / "schedule.csv"
    rows = dump_rows(sparsity, lr, total)
    write_csv(path, ["t", "sparsity", "lr"], rows)
    outputs.append(path.name)
    return {"rows": len(rows)}


def _run_linear(cfg: ExperimentConfig, out: Path, outputs: list[str]) -> dict[str, Any]:
    path = out / "linear_sim.csv"
    path.unlink(missing_ok=True)  # rows are appended per sub-run below
    outputs.append(path.name)
    summary = []
    for trial_cfg in _linear_plan(cfg):
        res = recovery_experiment(trial_cfg, jobs=cfg.jobs)
        write_csv(path, LINEAR_COLUMNS, [[
            trial_cfg.d, trial_cfg.n, trial_cfg.alpha_mode, trial_cfg.trials,
            res.p_one_shot, res.p_pgd, res.half_width(res.ci_one_shot), res.half_width(res.ci_pgd),
        ]], append=True)
        summary.append({"d": trial_cfg.d, "n": trial_cfg.n, "alpha_mode": trial_cfg.alpha_mode, **res.summary()})
    return {"runs": summary}


def _run_prune(cfg: ExperimentConfig, out: Path, outputs: list[str]) -> dict[str, Any]:
    methods, s_t, seeds, recipe = _prune_plan(cfg)
    pretrain = cfg.params.get("pretrain", {})
    table = out / "prune_train.csv"
    table.unlink(missing_ok=True)
    outputs.append(table.name)
    runs = []
    for seed in seeds:
        model, train, test = pretrained_blobs_model(seed, **pretrain)
        dense_acc = float(np.mean(model.forward(test.inputs).argmax(1) == test.labels))
        for method in methods:
            r = prune_train(model, train, test, method, s_t, recipe, seed=seed)
            trace_path = out / f"trace_{method}_seed{seed}.csv"
            write_csv(trace_path, TRACE_COLUMNS, trace_rows(r.result.trace, r.result.history))
            outputs.append(trace_path.name)
            row = {"method": method, "seed": seed, "s_t": s_t, "dense_accuracy": dense_acc,
                   "test_accuracy": r.test_accuracy, "train_accuracy": r.train_accuracy,
                   "sparsity": r.sparsity, "recovered": r.recovered,
                   "final_loss": r.result.trace[-1]["loss"]}
            write_csv(table, list(row), [list(row.values())], append=True)
            runs.append(row)
    medians = {m: float(np.median([r["test_accuracy"] for r in runs if r["method"] == m])) for m in methods}
    return {"runs": runs, "median_test_accuracy": medians}


def _run_ablate(cfg: ExperimentConfig, out: Path, outputs: list[str]) -> dict[str, Any]:
    kinds, k, s_t, recipe = _ablate_plan(cfg)
    model, train, test = pretrained_blobs_model(cfg.seed, **cfg.params.get("pretrain", {}))
    summary = {}
    for kind in kinds:
        stats = cycle_ablation(model, train, test, kind, k, s_t, recipe, seed=cfg.seed)
        path = out / f"ablation_{kind}.csv"
        write_csv(path, CYCLE_COLUMNS, [[s.cycle, s.accuracy, s.mask_jaccard, s.regrown_fraction] for s in stats])
        outputs.append(path.name)
        summary[kind] = [asdict(s) for s in stats]
    return {"cycles": summary}


_RUNNERS = {
    "schedule_dump": _run_schedule_dump,
    "linear_sim": _run_linear,
    "prune_train": _run_prune,
    "ablate": _run_ablate,
}


def run(config: ExperimentConfig | dict[str, Any]) -> RunManifest:
    """Validate, execute and write results plus ``manifest.json``.

    Invalid configs raise ``ConfigError`` before anything is written. Runtime
    failures still produce a manifest with ``status="failed"`` and re-raise.
    """
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    else:
        config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[str] = []
    start = time.perf_counter()
    status, error, summary = "ok", None, {}
    try:
        summary = _RUNNERS[config.kind](config, out, outputs)
    except Exception as exc:
        status, error = "failed", f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest = RunManifest(
            config=config.to_dict(),
            version=__version__,
            status=status,
            duration_s=time.perf_counter() - start,
            summary=summary,
            outputs=outputs,
            error=error,
        )
        _write_json_atomic(out / "manifest.json", manifest.to_dict())
    return manifest
