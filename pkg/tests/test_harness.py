import csv
import io
import json

import numpy as np
import pytest

from powerdistill import harness
from powerdistill.errors import ConfigError, ExportError
from powerdistill.harness import (
    DATASET_METHODS,
    SUMMARY_COLUMNS,
    ExperimentConfig,
    RunResult,
    export_summary,
    format_ranking,
    run_experiment,
    sweep,
)
from powerdistill.netgen import GenConfig, generate_dataset
from powerdistill.nncore import ArchSpec
from powerdistill.training import CSV_COLUMNS, TrainConfig


def tiny(pattern="dataset", methods=None, k=2, **kw) -> ExperimentConfig:
    gen = GenConfig(num_links=k, area=60.0, noise_power=1e-3)
    train = TrainConfig(epochs=1, batch_size=1, eval_every=1, lr=0.01, steps=6, env_batch=2)
    if methods is None:
        methods = list(DATASET_METHODS) if pattern == "dataset" else ["sup", "rl", "ad_rl_decreasing"]
    base = dict(gen=gen, arch=ArchSpec("mlp", k, hidden=(8,)), train=train, methods=methods, pattern=pattern,
                n_train=4, n_test=3, critic_hidden=(8,))
    base.update(kw)
    return ExperimentConfig(**base)


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_smoke_four_rows_per_method(tmp_path):
    cfg = tiny(output_dir=str(tmp_path))
    res = run_experiment(cfg)
    assert not res.failures
    rows = read_csv((tmp_path / f"metrics_{res.config_hash}_0.csv").read_text())
    for m in DATASET_METHODS:
        assert sum(r["method"] == m for r in rows) == 4
    assert all(r["config_hash"] == res.config_hash for r in rows)
    assert list(rows[0]) == list(CSV_COLUMNS) + ["config_hash"]


def test_aggregates_recomputable():
    res = run_experiment(tiny(seeds=[0, 1], methods=["unsup", "sup"]))
    for m, (mean, std) in res.aggregate.items():
        finals = [res.logs[s][m].final["test_sum_rate"] for s in (0, 1)]
        assert mean == np.mean(finals) and std == np.std(finals)


def test_rl_pattern_smoke(tmp_path):
    res = run_experiment(tiny("rl", output_dir=str(tmp_path)))
    assert not res.failures
    assert set(res.logs[0]) == {"sup", "rl", "ad_rl_decreasing"}
    assert res.logs[0]["rl"].final["epoch_or_step"] == 12


@pytest.mark.parametrize("change", [
    dict(arch=ArchSpec("mlp", 3)),
    dict(arch=ArchSpec("critic", 2)),
    dict(seeds=[]),
    dict(methods=[]),
    dict(methods=["rl"]),
    dict(pattern="other"),
    dict(sweep_axis="epochs", sweep_values=[1]),
    dict(sweep_axis="user_count"),
    dict(n_train=0),
    dict(teacher="nope"),
    dict(schedules={"decreasing": {"kind": "decreasing", "start": 0.0, "end": 1.0}}),
    dict(train_path="/nonexistent.json"),
])
def test_validation_before_compute(change, monkeypatch):
    called = []
    monkeypatch.setattr(harness, "_data", lambda cfg: called.append(1))
    with pytest.raises(ConfigError):
        run_experiment(tiny(**change))
    assert not called


def test_oracle_teacher_constraints():
    with pytest.raises(ConfigError):
        tiny("rl", teacher="oracle").validate()
    with pytest.raises(ConfigError):
        tiny(k=9, teacher="oracle").validate()


def test_config_json_roundtrip(tmp_path):
    cfg = tiny(seeds=[3, 4], sweep_axis="dataset_size", sweep_values=[4, 8])
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = ExperimentConfig.load(path)
    assert back.to_dict() == cfg.to_dict()
    assert back.config_hash() == cfg.config_hash()


def test_partial_schedule_override_and_unknown_fields():
    d = tiny().to_dict()
    d["schedules"] = {"fixed": {"start": 2.0, "end": 2.0}}
    cfg = ExperimentConfig.from_dict(d)
    assert cfg.schedules["fixed"] == {"kind": "fixed", "start": 2.0, "end": 2.0}
    assert cfg.schedules["decreasing"]["start"] == 1.0
    d["bogus"] = 1
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(d)


def test_hash_ignores_output_location():
    a, b = tiny(output_dir="/a"), tiny(output_dir="/b")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != tiny(data_seed=1).config_hash()


def test_loaded_datasets(tmp_path):
    gen = GenConfig(num_links=2, area=60.0, noise_power=1e-3)
    generate_dataset(gen, 6, 5).save(tmp_path / "tr.json")
    generate_dataset(gen, 3, 6).save(tmp_path / "te.json")
    cfg = tiny(methods=["unsup"], train_path=str(tmp_path / "tr.json"), test_path=str(tmp_path / "te.json"))
    assert not run_experiment(cfg).failures
    with pytest.raises(ConfigError):
        run_experiment(tiny(methods=["unsup"], n_train=10, train_path=str(tmp_path / "tr.json")))


def test_reproducible_csv(tmp_path):
    files = []
    for sub in ("a", "b"):
        res = run_experiment(tiny(seeds=[0, 1], output_dir=str(tmp_path / sub)))
        files.append([open(f, "rb").read() for f in res.files])
    assert files[0] == files[1]


def test_failed_method_is_isolated(monkeypatch):

    def boom(*a, **k):
        raise RuntimeError("solver blew up")

    monkeypatch.setattr(harness, "train_supervised", boom)
    res = run_experiment(tiny(methods=["sup", "unsup"]))
    assert res.failures == [(0, "sup", "RuntimeError: solver blew up")]
    assert "unsup" in res.logs[0] and "sup" not in res.aggregate


def test_singleton_sweep_equals_run():
    cfg = tiny(methods=["unsup"])
    [point] = sweep(cfg, "dataset_size", [4])
    ref = run_experiment(cfg.at_point("dataset_size", 4))
    assert point.config_hash == ref.config_hash
    assert point.logs[0]["unsup"].to_csv() == ref.logs[0]["unsup"].to_csv()


def test_sweep_changes_only_the_axis():
    a, b = sweep(tiny(methods=["unsup"]), "user_count", [2, 3])
    assert a.config.gen.num_links == 2 and b.config.arch.num_links == 3
    assert a.config.seeds == b.config.seeds and a.config.data_seed == b.config.data_seed
    with pytest.raises(ConfigError):
        sweep(tiny(), "none", [1])


def test_sweep_point_failure_does_not_leak(monkeypatch):
    cfg = tiny(methods=["unsup"])
    clean = sweep(cfg, "dataset_size", [4, 5])
    real = harness.run_experiment

    def flaky(point, axis="none", value=None):
        if value == 4:
            raise RuntimeError("point down")
        return real(point, axis, value)

    monkeypatch.setattr(harness, "run_experiment", flaky)
    broken = sweep(cfg, "dataset_size", [4, 5])
    assert not broken[0].ok and broken[0].failures
    assert broken[1].logs[0]["unsup"].to_csv() == clean[1].logs[0]["unsup"].to_csv()


def test_export_summary(tmp_path):
    results = sweep(tiny(methods=["unsup", "sup"], seeds=[0, 1]), "dataset_size", [4, 6])
    rows, ranking = export_summary(results, tmp_path)
    assert len(rows) == 2 * 2 * 2
    written = read_csv((tmp_path / "summary.csv").read_text())
    assert list(written[0]) == list(SUMMARY_COLUMNS)
    for r in ranking:
        res = next(x for x in results if x.config_hash == r["config_hash"])
        finals = res.finals(r["method"])
        assert abs(r["mean"] - np.mean(finals)) <= 1e-12
    for value in (4, 6):
        means = [r["mean"] for r in ranking if r["axis_value"] == value]
        assert means == sorted(means, reverse=True)
        assert [r["rank"] for r in ranking if r["axis_value"] == value] == [1, 2]
    assert "config" in format_ranking(ranking)


def test_export_single_row():
    res = run_experiment(tiny(methods=["unsup"]))
    rows, ranking = export_summary([res])
    assert len(rows) == 1 and rows[0]["config_hash"] == res.config_hash
    assert ranking[0]["rank"] == 1


def test_export_all_failed():
    cfg = tiny()
    dead = RunResult(cfg.config_hash(), cfg, {}, {}, [(None, None, "x")])
    with pytest.raises(ExportError):
        export_summary([dead])
