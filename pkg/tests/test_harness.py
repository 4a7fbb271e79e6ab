"""Tests for the experiment harness: configs, replicas, artifacts, CLI."""

import json
import math

import numpy as np
import pytest

from parimarket.cli import main
from parimarket.harness import (
    ConfigError,
    ExperimentConfig,
    aggregate,
    load_config,
    read_summaries,
    run_experiment,
    run_replica,
)


def base_raw(**overrides):
    raw = {
        "schema_version": 1,
        "environment": {"kind": "iid_categorical", "probabilities": [0.6, 0.4]},
        "agents": [
            {"strategy": {"kind": "truth_teller"}},
            {"strategy": {"kind": "constant", "allocation": [0.4, 0.6]}},
        ],
        "rounds": 40,
        "replicas": 2,
        "root_seed": 7,
    }
    raw.update(overrides)
    return raw


def test_config_round_trip_and_threshold_merge():
    config = ExperimentConfig.from_dict(base_raw(thresholds={"survival_floor": 0.01}))
    assert config.rounds == 40
    assert config.thresholds["survival_floor"] == 0.01
    # unspecified thresholds fall back to defaults
    assert config.thresholds["tail_fraction"] == 0.1
    again = ExperimentConfig.from_dict(config.to_dict())
    assert again.to_dict() == config.to_dict()
    assert again.digest() == config.digest()


def test_config_digest_tracks_content():
    a = ExperimentConfig.from_dict(base_raw())
    b = ExperimentConfig.from_dict(base_raw(root_seed=8))
    assert a.digest() != b.digest()
    # input key order does not matter
    shuffled = dict(reversed(list(base_raw().items())))
    assert ExperimentConfig.from_dict(shuffled).digest() == a.digest()


def test_config_field_errors():
    cases = [
        (base_raw(schema_version=99), "schema_version"),
        (base_raw(bogus=1), "bogus"),
        (base_raw(agents=[]), "agents"),
        (base_raw(rounds=0), "rounds"),
        (base_raw(replicas=0), "replicas"),
        (base_raw(root_seed=-1), "root_seed"),
        (base_raw(engine="warp"), "engine"),
        (base_raw(substeps=0), "substeps"),
        (base_raw(thin=0), "thin"),
        (base_raw(thresholds={"nope": 1}), "thresholds.nope"),
        (base_raw(agents=[{"strategy": {"kind": "truth_teller"}, "initial_wealth": 0.0}]),
         "agents[0].initial_wealth"),
    ]
    for raw, path in cases:
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict(raw)
        assert path in str(err.value)


def test_schedule_implies_substeps():
    config = ExperimentConfig.from_dict(
        base_raw(engine="flow", schedule=[0.25, 0.25, 0.5])
    )
    assert config.substeps == 3
    config.validate()


def test_validate_builds_every_component():
    bad_env = ExperimentConfig.from_dict(
        base_raw(environment={"kind": "iid_categorical", "probabilities": [0.6, 0.0, 0.4]})
    )
    with pytest.raises(ConfigError, match="environment"):
        bad_env.validate()
    bad_agent = ExperimentConfig.from_dict(
        base_raw(agents=[{"strategy": {"kind": "constant", "allocation": [1.0, 0.0]}}])
    )
    with pytest.raises(ConfigError, match=r"agents\[0\].strategy"):
        bad_agent.validate()


def test_validate_flow_constraints():
    flow_only = ExperimentConfig.from_dict(
        base_raw(
            environment={
                "kind": "progressive_revelation",
                "coins": 2,
                "head_probability": 0.5,
                "blackout": 0.01,
            },
            agents=[{"strategy": {"kind": "flow_truth_teller"}}],
            substeps=3,
        )
    )
    with pytest.raises(ConfigError, match="flow"):
        flow_only.validate()

    path_on_discrete = ExperimentConfig.from_dict(
        base_raw(
            agents=[
                {
                    "strategy": {
                        "kind": "constant",
                        "allocation": [0.4, 0.6],
                        "allocation_path": [[0.4, 0.6]],
                    }
                }
            ]
        )
    )
    with pytest.raises(ConfigError, match="flow engine"):
        path_on_discrete.validate()

    short_path = ExperimentConfig.from_dict(
        base_raw(
            engine="flow",
            substeps=2,
            agents=[
                {
                    "strategy": {
                        "kind": "constant",
                        "allocation": [0.4, 0.6],
                        "allocation_path": [[0.4, 0.6]],
                    }
                }
            ],
        )
    )
    with pytest.raises(ConfigError, match="sub-steps"):
        short_path.validate()

    bad_schedule = ExperimentConfig.from_dict(
        base_raw(engine="flow", schedule=[0.5, 0.2])
    )
    with pytest.raises(ConfigError, match="schedule"):
        bad_schedule.validate()


def test_validate_threshold_constraints():
    too_deep = ExperimentConfig.from_dict(
        base_raw(rounds=2, thresholds={"dyadic_levels": 3})
    )
    with pytest.raises(ConfigError, match="dyadic"):
        too_deep.validate()
    bad_window = ExperimentConfig.from_dict(
        base_raw(thresholds={"slope_window": [0, 20]})
    )
    with pytest.raises(ConfigError, match="slope_window"):
        bad_window.validate()
    bad_estimate = ExperimentConfig.from_dict(
        base_raw(thresholds={"estimate_window": 0})
    )
    with pytest.raises(ConfigError, match="estimate_window"):
        bad_estimate.validate()


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps(base_raw()))
    assert load_config(good).rounds == 40


def test_run_replica_is_deterministic():
    config = ExperimentConfig.from_dict(base_raw())
    a = run_replica(config, replica=0, collect_lines=True)
    b = run_replica(config, replica=0, collect_lines=True)
    assert a.summary == b.summary
    assert a.lines == b.lines
    other = run_replica(config, replica=1, collect_lines=True)
    assert other.summary != a.summary


def test_run_replica_summary_columns():
    raw = base_raw(
        agents=[
            {"strategy": {"kind": "truth_teller"}},
            {"strategy": {"kind": "noisy_truth_teller", "noise_scale": 0.1, "decay": 1.0}},
        ]
    )
    result = run_replica(ExperimentConfig.from_dict(raw), replica=0)
    summary = result.summary
    for key in (
        "config_digest",
        "rounds",
        "cum_sq_error_total",
        "convergence_passed",
        "convergence_window_1",
        "convergence_window_2",
        "final_share_0",
        "final_log_wealth_0",
        "slope_0",
        "verdict_0",
        "underflow_0",
        "final_share_1",
    ):
        assert key in summary
    # only the noisy agent reports a realized allocation error
    assert "allocation_sq_error_0" not in summary
    assert summary["allocation_sq_error_1"] >= 0.0
    # 40 rounds is below the default slope window minimum
    assert summary["slope_0"] is None
    assert summary["final_share_0"] + summary["final_share_1"] == pytest.approx(1.0, abs=1e-9)


def test_run_replica_jsonl_rows(tmp_path):
    config = ExperimentConfig.from_dict(base_raw(replicas=1, thin=5, rounds=20))
    result = run_replica(config, replica=0, collect_lines=True)
    rows = [json.loads(line) for line in result.lines.decode().splitlines()]
    assert [r["round"] for r in rows] == [0, 5, 10, 15]
    first = rows[0]
    assert first["replica"] == 0
    assert len(first["wealth_after"]) == 2
    assert len(first["allocations"]) == 2
    assert first["substep_weights"] is None
    assert first["realized"] in ([1.0, 0.0], [0.0, 1.0])
    assert math.fsum(first["forecast"]) == pytest.approx(1.0, abs=1e-9)


def test_decoded_estimate_columns():
    raw = base_raw(
        environment={
            "kind": "bounded_variable",
            "values": [0.2, 0.8],
            "probabilities": [0.5, 0.5],
            "lower": 0.0,
            "upper": 1.0,
            "encoding": "moments",
            "n_moments": 2,
        },
        agents=[{"strategy": {"kind": "truth_teller"}}],
        rounds=40,
        thresholds={"estimate_window": 10},
    )
    result = run_replica(ExperimentConfig.from_dict(raw), replica=0, collect_lines=True)
    assert result.summary["decoded_mean_avg"] == pytest.approx(0.5, abs=1e-9)
    assert result.summary["decoded_variance_avg"] == pytest.approx(0.09, abs=1e-9)
    row = json.loads(result.lines.decode().splitlines()[0])
    assert row["decoded_mean"] == pytest.approx(0.5, abs=1e-9)
    assert row["variance_suspect"] is False


def test_aggregate_statistics():
    config = ExperimentConfig.from_dict(base_raw(replicas=3, rounds=64))
    summaries = [run_replica(config, r).summary for r in range(3)]
    report = aggregate(summaries)
    assert report["replicas"] == 3
    assert report["config_digest"] == config.digest()
    stats = report["metrics"]["final_share_0"]
    values = [s["final_share_0"] for s in summaries]
    assert stats["count"] == 3
    assert stats["mean"] == pytest.approx(sum(values) / 3)
    assert stats["min"] == min(values)
    assert stats["max"] == max(values)
    # every replica has the same round count, so the spread collapses
    assert report["metrics"]["rounds"]["std"] == 0.0
    fractions = report["verdict_fractions"]["verdict_0"]
    assert sum(fractions.values()) == pytest.approx(1.0)
    assert set(fractions) == {"SURVIVED", "EXTINCT", "INCONCLUSIVE"}
    assert 0.0 <= report["flag_fractions"]["convergence_passed"] <= 1.0


def test_aggregate_rejections():
    with pytest.raises(ValueError, match="nothing"):
        aggregate([])
    config_a = ExperimentConfig.from_dict(base_raw())
    config_b = ExperimentConfig.from_dict(base_raw(root_seed=8))
    with pytest.raises(ValueError, match="different configs"):
        aggregate([run_replica(config_a, 0).summary, run_replica(config_b, 0).summary])


def test_aggregate_skips_missing_values():
    config = ExperimentConfig.from_dict(base_raw(rounds=40))
    summaries = [run_replica(config, r).summary for r in range(2)]
    # 40-round runs cannot produce slopes; the metric reports zero samples
    assert all(s["slope_0"] is None for s in summaries)
    report = aggregate(summaries)
    assert report["metrics"]["slope_0"] == {"count": 0}


def test_run_experiment_writes_identical_artifacts(tmp_path):
    config = ExperimentConfig.from_dict(base_raw(replicas=2, rounds=32, thin=4))
    report1 = run_experiment(config, tmp_path / "a")
    report2 = run_experiment(config, tmp_path / "b")
    names = ["config.json", "summary.csv", "aggregate.json", "replica_0000.jsonl", "replica_0001.jsonl"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert report1 == report2
    rows = (tmp_path / "a" / "replica_0001.jsonl").read_text().splitlines()
    assert len(rows) == 8  # 32 rounds, every 4th recorded
    stored = json.loads((tmp_path / "a" / "config.json").read_text())
    assert ExperimentConfig.from_dict(stored).digest() == config.digest()


def test_read_summaries_round_trip(tmp_path):
    config = ExperimentConfig.from_dict(base_raw(replicas=2, rounds=32))
    run_experiment(config, tmp_path / "out")
    loaded = read_summaries(tmp_path / "out")
    direct = [run_replica(config, r).summary for r in range(2)]
    assert len(loaded) == 2
    for row, ref in zip(loaded, direct):
        assert row["replica"] == ref["replica"]
        assert row["config_digest"] == ref["config_digest"]
        assert row["verdict_0"] == ref["verdict_0"]
        assert row["slope_0"] is None and ref["slope_0"] is None
        assert row["convergence_passed"] is ref["convergence_passed"]
        assert row["final_share_1"] == pytest.approx(ref["final_share_1"], rel=1e-12)
    with pytest.raises(FileNotFoundError, match="summary.csv"):
        read_summaries(tmp_path / "nowhere")


def test_cli_validate_and_run(tmp_path, capsys):
    config_path = tmp_path / "exp.json"
    config_path.write_text(json.dumps(base_raw(replicas=2, rounds=32)))
    assert main(["validate", "--config", str(config_path)]) == 0
    assert "ok: 2 replica(s)" in capsys.readouterr().out

    out_dir = tmp_path / "results"
    code = main(
        ["run", "--config", str(config_path), "--out", str(out_dir), "--rounds", "16", "--thin", "2"]
    )
    assert code == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["replicas"] == 2
    assert (out_dir / "summary.csv").exists()

    assert main(["report", "--in", str(out_dir)]) == 0
    reported = json.loads(capsys.readouterr().out)
    assert reported["config_digest"] == printed["config_digest"]
    assert reported["replicas"] == 2


def test_cli_error_paths(tmp_path, capsys):
    missing = tmp_path / "missing.json"
    assert main(["validate", "--config", str(missing)]) == 1
    assert "config error" in capsys.readouterr().err
    assert main(["report", "--in", str(tmp_path / "empty")]) == 2
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(base_raw(rounds=0)))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "rounds" in capsys.readouterr().err
    override = tmp_path / "good.json"
    override.write_text(json.dumps(base_raw()))
    assert main(["run", "--config", str(override), "--rounds", "0"]) == 1
    assert "rounds" in capsys.readouterr().err


def test_cli_seed_override_changes_digest(tmp_path, capsys):
    config_path = tmp_path / "exp.json"
    config_path.write_text(json.dumps(base_raw(replicas=1, rounds=16)))
    main(["run", "--config", str(config_path), "--out", str(tmp_path / "a"), "--seed", "1"])
    a = json.loads(capsys.readouterr().out)
    main(["run", "--config", str(config_path), "--out", str(tmp_path / "b"), "--seed", "2"])
    b = json.loads(capsys.readouterr().out)
    assert a["config_digest"] != b["config_digest"]


def test_console_script_runs(tmp_path):
    import subprocess

    config_path = tmp_path / "exp.json"
    config_path.write_text(json.dumps(base_raw(replicas=1, rounds=16)))
    proc = subprocess.run(
        ["parimarket", "validate", "--config", str(config_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "ok:" in proc.stdout
