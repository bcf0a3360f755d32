"""Experiment orchestration: config files, seeded runs, sweeps, CSV export.

A run trains every configured method for every seed on the same data and
writes one ``metrics_<hash>_<seed>.csv`` per seed. ``export_summary`` folds a
list of runs into a long-format ``summary.csv`` and a per-point ranking.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import io
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, ExportError
from .netgen import Dataset, GenConfig, InstanceSampler, derived_seed, generate_dataset
from .nncore import ArchSpec, build_model
from .teachers import label_dataset
from .training import (
    BetaSchedule,
    EvalSet,
    TrainConfig,
    train_ad_rl,
    train_ad_unsupervised,
    train_rl,
    train_rl_supervised,
    train_supervised,
    train_unsupervised,
)

log = logging.getLogger(__name__)

PATTERNS = ("dataset", "rl")
AXES = ("none", "user_count", "dataset_size")
DATASET_METHODS = ("sup", "unsup", "ad_fixed", "ad_increasing", "ad_decreasing")
RL_METHODS = ("sup", "rl", "ad_rl_fixed", "ad_rl_increasing", "ad_rl_decreasing")
DEFAULT_SCHEDULES = {
    "fixed": {"kind": "fixed", "start": 0.5, "end": 0.5},
    "increasing": {"kind": "increasing", "start": 0.1, "end": 1.0},
    "decreasing": {"kind": "decreasing", "start": 1.0, "end": 0.0},
}
SUMMARY_COLUMNS = (
    "config_hash", "axis", "axis_value", "method", "seed", "final_test_sum_rate", "teacher_ratio",
)
RANKING_COLUMNS = ("config_hash", "axis", "axis_value", "rank", "method", "mean", "std", "n_seeds")


@dataclasses.dataclass
class ExperimentConfig:
    gen: GenConfig
    arch: ArchSpec
    train: TrainConfig
    methods: list
    pattern: str = "dataset"
    teacher: str = "fplinq"
    schedules: dict = dataclasses.field(default_factory=lambda: copy.deepcopy(DEFAULT_SCHEDULES))
    n_train: int = 500
    n_test: int = 250
    data_seed: int = 0
    seeds: list = dataclasses.field(default_factory=lambda: [0])
    sweep_axis: str = "none"
    sweep_values: list = dataclasses.field(default_factory=list)
    critic_hidden: tuple = (256, 256)
    train_path: Optional[str] = None   # dataset JSON files; generated from data_seed when absent
    test_path: Optional[str] = None
    output_dir: Optional[str] = None

    def validate(self) -> None:
        if self.pattern not in PATTERNS:
            raise ConfigError(f"pattern must be one of {PATTERNS}")
        if self.arch.num_links != self.gen.num_links:
            raise ConfigError(
                f"arch.num_links={self.arch.num_links} does not match gen.num_links={self.gen.num_links}"
            )
        if self.arch.kind == "critic":
            raise ConfigError("the student architecture must be mlp or gnn")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if not self.methods:
            raise ConfigError("no methods configured")
        allowed = DATASET_METHODS if self.pattern == "dataset" else RL_METHODS
        for m in self.methods:
            if m not in allowed:
                raise ConfigError(f"method {m!r} is not valid for the {self.pattern} pattern; choose from {allowed}")
        for kind, sched in self.schedules.items():
            BetaSchedule.from_dict(sched)
        if self.sweep_axis not in AXES:
            raise ConfigError(f"sweep axis must be one of {AXES}")
        if self.sweep_axis != "none" and not self.sweep_values:
            raise ConfigError("a sweep needs at least one value")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be >= 1")
        if self.teacher not in ("wmmse", "fplinq", "oracle"):
            raise ConfigError(f"unknown teacher {self.teacher!r}")
        if self.pattern == "rl" and self.teacher == "oracle":
            raise ConfigError("the RL pattern labels on the fly and needs an iterative teacher")
        if self.teacher == "oracle" and self.gen.num_links > 8:
            raise ConfigError("the grid oracle is limited to K <= 8")
        for path in (self.train_path, self.test_path):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"dataset file {path} does not exist")

    def to_dict(self) -> dict:
        return {
            "gen": self.gen.to_dict(),
            "arch": self.arch.to_dict(),
            "train": self.train.to_dict(),
            "methods": list(self.methods),
            "pattern": self.pattern,
            "teacher": self.teacher,
            "schedules": self.schedules,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "data_seed": self.data_seed,
            "seeds": list(self.seeds),
            "sweep": {"axis": self.sweep_axis, "values": list(self.sweep_values)},
            "critic_hidden": list(self.critic_hidden),
            "train_path": self.train_path,
            "test_path": self.test_path,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        gen = GenConfig.from_dict(d.pop("gen", {}))
        arch_d = dict(d.pop("arch", {"kind": "mlp"}))
        arch_d.setdefault("num_links", gen.num_links)
        arch = ArchSpec.from_dict(arch_d)
        train = TrainConfig.from_dict(d.pop("train", {}))
        sweep = d.pop("sweep", {"axis": "none", "values": []})
        schedules = copy.deepcopy(DEFAULT_SCHEDULES)
        for kind, sched in d.pop("schedules", {}).items():
            schedules[kind] = {**schedules.get(kind, {"kind": kind}), **sched}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment fields: {sorted(unknown)}")
        if "critic_hidden" in d:
            d["critic_hidden"] = tuple(d["critic_hidden"])
        cfg = cls(
            gen=gen, arch=arch, train=train, schedules=schedules,
            sweep_axis=sweep.get("axis", "none"), sweep_values=list(sweep.get("values", [])), **d,
        )
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        # where results go and which sweep a point belongs to do not change its numbers
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("sweep")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def at_point(self, axis: str, value) -> "ExperimentConfig":
        """This config with one sweep coordinate fixed."""
        cfg = copy.deepcopy(self)
        cfg.sweep_axis, cfg.sweep_values = "none", []
        if axis == "user_count":
            k = int(value)
            cfg.gen = dataclasses.replace(cfg.gen, num_links=k)
            cfg.arch = dataclasses.replace(cfg.arch, num_links=k)
        elif axis == "dataset_size":
            cfg.n_train = int(value)
        elif axis != "none":
            raise ConfigError(f"unknown sweep axis {axis!r}")
        return cfg


@dataclasses.dataclass
class RunResult:
    config_hash: str
    config: ExperimentConfig
    logs: dict                      # seed -> {method: MetricsLog}
    aggregate: dict                 # method -> (mean, std) of final test sum rate
    failures: list                  # (seed, method, message)
    axis: str = "none"
    axis_value: Optional[float] = None
    files: list = dataclasses.field(default_factory=list)

    @property
    def ok(self) -> bool:
        return any(self.logs.get(s) for s in self.logs)

    def finals(self, method: str) -> list:
        return [self.logs[s][method].final["test_sum_rate"] for s in sorted(self.logs) if method in self.logs[s]]


def _schedule(cfg: ExperimentConfig, method: str) -> BetaSchedule:
    kind = method.rsplit("_", 1)[-1]
    return BetaSchedule.from_dict(cfg.schedules[kind])


def _load(path, cfg: ExperimentConfig, n: int) -> Dataset:
    ds = Dataset.load(path)
    if ds.instances[0].num_links != cfg.gen.num_links:
        raise ConfigError(f"{path} has K={ds.instances[0].num_links}, config says {cfg.gen.num_links}")
    if len(ds) < n:
        raise ConfigError(f"{path} holds {len(ds)} instances, {n} requested")
    return Dataset(ds.instances[:n], ds.config, ds.seed)


def _data(cfg: ExperimentConfig):
    train = None
    if cfg.pattern == "dataset":
        train = (_load(cfg.train_path, cfg, cfg.n_train) if cfg.train_path
                 else generate_dataset(cfg.gen, cfg.n_train, derived_seed(cfg.data_seed, 1)))
    test = (_load(cfg.test_path, cfg, cfg.n_test) if cfg.test_path
            else generate_dataset(cfg.gen, cfg.n_test, derived_seed(cfg.data_seed, 2)))
    return train, test


def _run_seed(cfg: ExperimentConfig, seed: int, train, train_labels, test_instances, test_labels, failures):
    tc = dataclasses.replace(cfg.train, seed=seed, teacher=cfg.teacher)
    fit_on = train.instances if train is not None else test_instances
    if cfg.pattern == "rl":
        # the RL pattern has no training set; fit input statistics on a draw of the environment
        fit_on = [inst for _, inst in InstanceSampler(cfg.gen, derived_seed(seed, 4)).sample(max(64, cfg.n_test))]
    actor0 = build_model(cfg.arch, seed, fit_on)
    critic0 = None
    if cfg.pattern == "rl":
        critic_spec = ArchSpec("critic", cfg.arch.num_links, hidden=tuple(cfg.critic_hidden),
                               activation=cfg.arch.activation)
        critic0 = build_model(critic_spec, derived_seed(seed, 5))
        critic0.norm = actor0.norm
    test = EvalSet.for_model(actor0, test_instances, test_labels)
    logs = {}
    for method in cfg.methods:
        try:
            if cfg.pattern == "dataset":
                if method == "sup":
                    _, mlog = train_supervised(actor0, train, train_labels, tc.replace(method="sup"), test)
                elif method == "unsup":
                    _, mlog = train_unsupervised(actor0, train, tc.replace(method="unsup"), test)
                else:
                    _, mlog = train_ad_unsupervised(actor0, train, train_labels, tc.replace(method="ad_unsup"),
                                                    _schedule(cfg, method), test, method=method)
            else:
                env = InstanceSampler(cfg.gen, derived_seed(seed, 3))
                if method == "sup":
                    _, mlog = train_rl_supervised(actor0, env, tc.replace(method="sup"), test)
                elif method == "rl":
                    _, _, mlog = train_rl(actor0, critic0, env, tc.replace(method="rl"), test)
                else:
                    _, _, mlog = train_ad_rl(actor0, critic0, env, tc.replace(method="ad_rl"),
                                             _schedule(cfg, method), test, method=method)
            logs[method] = mlog
        except Exception as exc:  # one failing method must not take the others down
            log.exception("seed %s method %s failed", seed, method)
            failures.append((seed, method, f"{type(exc).__name__}: {exc}"))
    return logs


def run_experiment(cfg: ExperimentConfig, axis: str = "none", axis_value=None) -> RunResult:
    cfg.validate()
    h = cfg.config_hash()
    train, test = _data(cfg)
    train_labels = label_dataset(train, cfg.teacher) if train is not None else None
    test_labels = label_dataset(test, cfg.teacher)
    logs, failures, files = {}, [], []
    out = Path(cfg.output_dir) if cfg.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for seed in cfg.seeds:
        seed_logs = _run_seed(cfg, seed, train, train_labels, test.instances, test_labels, failures)
        logs[seed] = seed_logs
        if out is not None and seed_logs:
            path = out / f"metrics_{h}_{seed}.csv"
            path.write_text(metrics_csv(seed_logs, h))
            files.append(str(path))
    aggregate = {}
    for method in cfg.methods:
        finals = [logs[s][method].final["test_sum_rate"] for s in cfg.seeds if method in logs[s]]
        if finals:
            aggregate[method] = (float(np.mean(finals)), float(np.std(finals)))
    return RunResult(h, cfg, logs, aggregate, failures, axis, axis_value, files)


def metrics_csv(seed_logs: dict, config_hash: str) -> str:
    """All methods of one seed in one CSV; ``config_hash`` is the last column."""
    buf = io.StringIO()
    first = True
    for method, mlog in seed_logs.items():
        body = mlog.to_csv(header=first)
        lines = body.splitlines()
        if first:
            lines[0] += ",config_hash"
            lines = [lines[0]] + [ln + "," + config_hash for ln in lines[1:]]
        else:
            lines = [ln + "," + config_hash for ln in lines]
        buf.write("\n".join(lines) + "\n")
        first = False
    return buf.getvalue()


def sweep(cfg: ExperimentConfig, axis: Optional[str] = None, values=None) -> list:
    """One run per axis value, everything else (seeds included) held fixed."""
    axis = axis or cfg.sweep_axis
    values = list(values if values is not None else cfg.sweep_values)
    if axis not in ("user_count", "dataset_size"):
        raise ConfigError("sweep axis must be user_count or dataset_size")
    cfg.at_point(axis, values[0]).validate() if values else None
    results = []
    for v in values:
        point = cfg.at_point(axis, v)
        try:
            results.append(run_experiment(point, axis, v))
        except ConfigError:
            raise
        except Exception as exc:
            log.exception("sweep point %s=%s failed", axis, v)
            results.append(RunResult(point.config_hash(), point, {}, {}, [(None, None, str(exc))], axis, v))
    return results


def export_summary(results, out_dir=None):
    """Long-format rows plus a ranking per sweep point; optionally written to disk.

    Returns ``(summary_rows, ranking_rows)``.
    """
    rows = []
    for res in results:
        for seed in sorted(res.logs):
            for method, mlog in res.logs[seed].items():
                final = mlog.final
                rows.append({
                    "config_hash": res.config_hash,
                    "axis": res.axis,
                    "axis_value": res.axis_value,
                    "method": method,
                    "seed": seed,
                    "final_test_sum_rate": final.get("test_sum_rate"),
                    "teacher_ratio": final.get("teacher_ratio"),
                })
    if not rows:
        raise ExportError("no successful runs to export")
    ranking = []
    for res in results:
        stats = []
        for method in res.config.methods:
            vals = [r["final_test_sum_rate"] for r in rows
                    if r["config_hash"] == res.config_hash and r["method"] == method]
            if vals:
                stats.append((method, float(np.mean(vals)), float(np.std(vals)), len(vals)))
        stats.sort(key=lambda s: -s[1])
        for rank, (method, mean, std, n) in enumerate(stats, start=1):
            ranking.append({
                "config_hash": res.config_hash, "axis": res.axis, "axis_value": res.axis_value,
                "rank": rank, "method": method, "mean": mean, "std": std, "n_seeds": n,
            })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(_rows_csv(rows, SUMMARY_COLUMNS))
        (out / "ranking.csv").write_text(_rows_csv(ranking, RANKING_COLUMNS))
    return rows, ranking


def _rows_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in columns])
    return buf.getvalue()


def format_ranking(ranking) -> str:
    """Plain-text comparison table."""
    lines = []
    point = object()
    for r in ranking:
        key = (r["axis"], r["axis_value"])
        if key != point:
            point = key
            label = "" if r["axis"] == "none" else f"  [{r['axis']}={r['axis_value']}]"
            lines.append(f"config {r['config_hash']}{label}")
        lines.append(f"  {r['rank']:>2}. {r['method']:<18} {r['mean']:9.4f} +/- {r['std']:.4f}  (n={r['n_seeds']})")
    return "\n".join(lines)
