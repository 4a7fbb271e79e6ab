"""Experiment orchestration.

A single JSON config describes one experiment: environment, agents, engine
choice, horizon, replica count and root seed. Replicas run independently on
deterministic derived random streams and emit one JSONL trajectory file each,
one CSV summary row each, and a shared aggregate report. Identical config and
seed produce byte-identical files, whether replicas run serially or in a
process pool.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .core import (
    DebitSchedule,
    RoundRecord,
    SimplexPoint,
    WealthVector,
    substream,
)
from .diagnostics import (
    DiagnosticsAccumulator,
    DiagnosticsSeries,
    Verdict,
    convergence_report,
    log_wealth_slope,
    survival_verdict,
)
from .engine import run_discrete
from .environments import BoundedVariableEnvironment, build_environment
from .estimators import decode_bounded_mean, decode_moments
from .flow import as_flow, run_flow
from .strategies import build_strategy

SCHEMA_VERSION = 1

DEFAULT_THRESHOLDS: dict = {
    "survival_floor": 1e-3,
    "extinction_threshold": 1e-6,
    "tail_fraction": 0.1,
    "convergence_delta": 0.01,
    "dyadic_levels": 2,
    "slope_window": None,
    "estimate_window": 500,
}

# Environment kinds that only exist at sub-step granularity.
_FLOW_ONLY_KINDS = {"progressive_revelation"}


class ConfigError(Exception):
    """Invalid experiment configuration; carries the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _require(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ConfigError(path, message)


@dataclass
class ExperimentConfig:
    """One experiment: who plays what game, for how long, under which seed."""

    environment: dict
    agents: list[dict]
    rounds: int
    replicas: int = 1
    root_seed: int = 0
    engine: str = "discrete"
    substeps: int = 1
    schedule: list[float] | None = None
    thin: int = 1
    thresholds: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        merged = dict(DEFAULT_THRESHOLDS)
        merged.update(self.thresholds)
        self.thresholds = merged

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        _require(isinstance(raw, dict), "$", "config must be a JSON object")
        version = raw.get("schema_version")
        _require(
            version == SCHEMA_VERSION,
            "schema_version",
            f"expected {SCHEMA_VERSION}, got {version!r}",
        )
        known = {
            "schema_version",
            "environment",
            "agents",
            "rounds",
            "replicas",
            "root_seed",
            "engine",
            "substeps",
            "schedule",
            "thin",
            "thresholds",
        }
        for key in raw:
            _require(key in known, key, "unknown field")
        _require(isinstance(raw.get("environment"), dict), "environment", "must be an object")
        agents = raw.get("agents")
        _require(
            isinstance(agents, list) and len(agents) >= 1, "agents", "must be a non-empty list"
        )
        for i, agent in enumerate(agents):
            _require(isinstance(agent, dict), f"agents[{i}]", "must be an object")
            _require(
                isinstance(agent.get("strategy"), dict),
                f"agents[{i}].strategy",
                "must be an object",
            )
            w0 = agent.get("initial_wealth", 1.0)
            _require(
                isinstance(w0, (int, float)) and math.isfinite(w0) and w0 > 0,
                f"agents[{i}].initial_wealth",
                "must be strictly positive",
            )
        rounds = raw.get("rounds")
        _require(isinstance(rounds, int) and rounds >= 1, "rounds", "must be an integer >= 1")
        replicas = raw.get("replicas", 1)
        _require(
            isinstance(replicas, int) and replicas >= 1, "replicas", "must be an integer >= 1"
        )
        root_seed = raw.get("root_seed", 0)
        _require(
            isinstance(root_seed, int) and root_seed >= 0,
            "root_seed",
            "must be a non-negative integer",
        )
        engine = raw.get("engine", "discrete")
        _require(engine in ("discrete", "flow"), "engine", f"unknown engine {engine!r}")
        substeps = raw.get("substeps", 1)
        _require(
            isinstance(substeps, int) and substeps >= 1, "substeps", "must be an integer >= 1"
        )
        schedule = raw.get("schedule")
        if schedule is not None:
            _require(isinstance(schedule, list) and schedule, "schedule", "must be a list")
            substeps = len(schedule)
        thin = raw.get("thin", 1)
        _require(isinstance(thin, int) and thin >= 1, "thin", "must be an integer >= 1")
        thresholds = raw.get("thresholds", {})
        _require(isinstance(thresholds, dict), "thresholds", "must be an object")
        for key in thresholds:
            _require(key in DEFAULT_THRESHOLDS, f"thresholds.{key}", "unknown threshold")
        return cls(
            environment=dict(raw["environment"]),
            agents=[dict(a) for a in agents],
            rounds=rounds,
            replicas=replicas,
            root_seed=root_seed,
            engine=engine,
            substeps=substeps,
            schedule=list(schedule) if schedule is not None else None,
            thin=thin,
            thresholds=dict(thresholds),
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "environment": self.environment,
            "agents": self.agents,
            "rounds": self.rounds,
            "replicas": self.replicas,
            "root_seed": self.root_seed,
            "engine": self.engine,
            "substeps": self.substeps,
            "schedule": self.schedule,
            "thin": self.thin,
            "thresholds": self.thresholds,
        }

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def validate(self) -> None:
        """Full validation, including construction of every component."""
        probe = substream(self.root_seed, 0, "validate")
        try:
            environment = build_environment(self.environment, probe)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError("environment", str(exc)) from exc
        kind = self.environment.get("kind")
        if kind in _FLOW_ONLY_KINDS:
            _require(
                self.engine == "flow",
                "engine",
                f"environment kind {kind!r} requires the flow engine",
            )
        for i, agent in enumerate(self.agents):
            try:
                build_strategy(agent["strategy"], probe)
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"agents[{i}].strategy", str(exc)) from exc
            path = agent["strategy"].get("allocation_path")
            if path is not None:
                _require(
                    self.engine == "flow",
                    f"agents[{i}].strategy.allocation_path",
                    "only meaningful for the flow engine",
                )
                _require(
                    len(path) == self.substeps,
                    f"agents[{i}].strategy.allocation_path",
                    f"has {len(path)} sub-steps, schedule has {self.substeps}",
                )
        if self.schedule is not None:
            try:
                DebitSchedule.from_weights(self.schedule)
            except ValueError as exc:
                raise ConfigError("schedule", str(exc)) from exc
        levels = self.thresholds["dyadic_levels"]
        _require(
            isinstance(levels, int) and levels >= 1,
            "thresholds.dyadic_levels",
            "must be an integer >= 1",
        )
        _require(
            self.rounds >> levels >= 1,
            "rounds",
            f"too few rounds for {levels} dyadic convergence windows",
        )
        window = self.thresholds["slope_window"]
        if window is not None:
            ok = (
                isinstance(window, (list, tuple))
                and len(window) == 2
                and all(isinstance(v, int) for v in window)
                and 0 <= window[0] < window[1] <= self.rounds
                and window[1] - window[0] >= 100
            )
            _require(ok, "thresholds.slope_window", "must be [start, stop] spanning >= 100 rounds")
        estimate_window = self.thresholds["estimate_window"]
        _require(
            isinstance(estimate_window, int) and estimate_window >= 1,
            "thresholds.estimate_window",
            "must be an integer >= 1",
        )
        del environment

    def initial_wealth(self) -> WealthVector:
        return WealthVector.from_amounts(
            [agent.get("initial_wealth", 1.0) for agent in self.agents]
        )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError("$", f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


def _point_list(point: SimplexPoint) -> list[float]:
    return list(point.weights)


def _record_row(record: RoundRecord, replica: int, decoded: dict | None) -> dict:
    if record.is_flow:
        allocations = [
            [_point_list(p) for p in d.path(len(record.substep_weights))]
            for d in record.decisions
        ]
        forecast = [_point_list(p) for p in record.forecast_points()]
        oracle = [_point_list(p) for p in record.oracle_points()]
    else:
        allocations = [_point_list(d.allocation) for d in record.decisions]
        forecast = _point_list(record.forecast_points()[0])
        oracle = _point_list(record.oracle_points()[0])
    row = {
        "replica": replica,
        "round": record.round_index,
        "wealth_before": list(record.wealth_before.shares),
        "wealth_after": list(record.wealth_after.shares),
        "underflow": list(record.wealth_after.underflow_flags),
        "stakes": [d.stake_fraction for d in record.decisions],
        "allocations": allocations,
        "forecast_nu": record.forecast_nu,
        "forecast": forecast,
        "oracle": oracle,
        "realized": _point_list(record.realized),
        "log_growth": list(record.log_growth),
        "sq_forecast_error": record.sq_forecast_error,
        "conservation_drift": record.conservation_drift,
        "substep_weights": list(record.substep_weights) if record.is_flow else None,
    }
    if decoded is not None:
        row.update(decoded)
    return row


def _decode_forecast(environment, record: RoundRecord) -> dict | None:
    """Estimator columns for environments that encode a bounded scalar."""
    if not isinstance(environment, BoundedVariableEnvironment):
        return None
    forecast = record.forecast_points()[-1]
    span = environment.upper - environment.lower
    if environment.encoding == "mean":
        mean = decode_bounded_mean(forecast, environment.lower, environment.upper)
        return {"decoded_mean": mean}
    est = decode_moments(forecast, environment.n_moments)
    decoded = {"decoded_mean": environment.lower + span * est.mean}
    if est.variance is not None:
        decoded["decoded_variance"] = span * span * est.variance
        decoded["variance_suspect"] = est.variance_suspect
    return decoded


@dataclass
class ReplicaResult:
    """Everything one replica produces: flat summary, full series, and the
    serialized trajectory when requested."""

    replica: int
    summary: dict
    series: DiagnosticsSeries
    lines: bytes | None = None


def run_replica(
    config: ExperimentConfig, replica: int, collect_lines: bool = False
) -> ReplicaResult:
    """Run one replica on its derived random streams and summarize it."""
    env_rng = substream(config.root_seed, replica, "environment")
    environment = build_environment(config.environment, env_rng)
    strategies = [
        build_strategy(agent["strategy"], substream(config.root_seed, replica, f"agent-{m}"))
        for m, agent in enumerate(config.agents)
    ]
    wealth0 = config.initial_wealth()
    thresholds = config.thresholds
    acc = DiagnosticsAccumulator(wealth0)
    lines: list[str] = []
    estimate_window = int(thresholds["estimate_window"])
    decoded_tail: deque = deque(maxlen=max(1, estimate_window))
    final_flags: list[tuple[bool, ...]] = [wealth0.underflow_flags]

    def on_round(record: RoundRecord) -> None:
        acc.update(record)
        final_flags[0] = record.wealth_after.underflow_flags
        decoded = _decode_forecast(environment, record)
        if decoded is not None:
            decoded_tail.append(decoded)
        if collect_lines and record.round_index % config.thin == 0:
            lines.append(json.dumps(_record_row(record, replica, decoded)))

    if config.engine == "flow":
        schedule = (
            DebitSchedule.from_weights(config.schedule)
            if config.schedule is not None
            else DebitSchedule.equal(config.substeps)
        )
        flow_env = environment if hasattr(environment, "begin_round") else as_flow(environment)
        run_flow(flow_env, strategies, config.rounds, schedule, wealth0, on_round=on_round)
    else:
        run_discrete(environment, strategies, config.rounds, wealth0, on_round=on_round)

    series = acc.finish()
    summary = _summarize(config, replica, series, decoded_tail, final_flags[0])
    for m, strategy in enumerate(strategies):
        realized_sq = getattr(strategy, "squared_error_total", None)
        if realized_sq is not None:
            summary[f"allocation_sq_error_{m}"] = float(realized_sq)
    payload = ("\n".join(lines) + "\n").encode("utf-8") if collect_lines and lines else b""
    return ReplicaResult(
        replica=replica,
        summary=summary,
        series=series,
        lines=payload if collect_lines else None,
    )


def _summarize(
    config: ExperimentConfig,
    replica: int,
    series: DiagnosticsSeries,
    decoded_tail: Sequence[dict],
    underflow_flags: tuple[bool, ...],
) -> dict:
    thresholds = config.thresholds
    verdicts = survival_verdict(
        series,
        tail_fraction=thresholds["tail_fraction"],
        floor=thresholds["survival_floor"],
        extinction_threshold=thresholds["extinction_threshold"],
    )
    report = convergence_report(
        series,
        delta=thresholds["convergence_delta"],
        levels=thresholds["dyadic_levels"],
    )
    window = thresholds["slope_window"]
    if window is None and config.rounds >= 200:
        window = (config.rounds // 2, config.rounds)
    summary: dict = {
        "replica": replica,
        "config_digest": config.digest(),
        "rounds": config.rounds,
        "cum_sq_error_total": report.total,
        "convergence_passed": report.passed,
    }
    for i, (_, _, increment) in enumerate(report.windows, start=1):
        summary[f"convergence_window_{i}"] = increment
    final_logw = series.log_wealth[-1]
    for m in range(series.agent_count):
        summary[f"final_share_{m}"] = float(math.exp(final_logw[m]))
        summary[f"final_log_wealth_{m}"] = float(final_logw[m])
        slope = None
        if window is not None:
            try:
                slope = log_wealth_slope(series, window[0], window[1], m)
            except ValueError:
                slope = None
        summary[f"slope_{m}"] = slope
        summary[f"verdict_{m}"] = verdicts[m].value
        summary[f"underflow_{m}"] = bool(underflow_flags[m])
    if decoded_tail:
        keys = [k for k in decoded_tail[-1] if k != "variance_suspect"]
        for key in keys:
            values = [row[key] for row in decoded_tail if key in row]
            summary[f"{key}_avg"] = math.fsum(values) / len(values)
    return summary


def _replica_payload(config_dict: dict, replica: int) -> tuple[dict, bytes]:
    config = ExperimentConfig.from_dict(config_dict)
    result = run_replica(config, replica, collect_lines=True)
    return result.summary, result.lines or b""


def _replica_payload_star(args: tuple[dict, int]) -> tuple[dict, bytes]:
    return _replica_payload(*args)


def aggregate(summaries: Sequence[dict]) -> dict:
    """Merge replica summaries into one report; order-independent."""
    if not summaries:
        raise ValueError("nothing to aggregate")
    digests = {s.get("config_digest") for s in summaries}
    if len(digests) != 1:
        raise ValueError(f"summaries come from {len(digests)} different configs")
    keys = list(summaries[0].keys())
    for s in summaries[1:]:
        if list(s.keys()) != keys:
            raise ValueError("summaries have differing columns")
    metrics: dict = {}
    verdict_fractions: dict = {}
    flags: dict = {}
    n = len(summaries)
    for key in keys:
        if key in ("replica", "config_digest"):
            continue
        values = [s[key] for s in summaries]
        if key.startswith("verdict_"):
            counts = {v.value: 0 for v in Verdict}
            for v in values:
                counts[v] += 1
            verdict_fractions[key] = {name: c / n for name, c in counts.items()}
        elif all(isinstance(v, bool) for v in values):
            flags[key] = sum(values) / n
        else:
            numeric = [float(v) for v in values if v is not None]
            if not numeric:
                metrics[key] = {"count": 0}
                continue
            mean = math.fsum(numeric) / len(numeric)
            var = math.fsum((v - mean) ** 2 for v in numeric) / len(numeric)
            metrics[key] = {
                "count": len(numeric),
                "mean": mean,
                "std": math.sqrt(var),
                "min": min(numeric),
                "max": max(numeric),
            }
    return {
        "schema_version": SCHEMA_VERSION,
        "replicas": n,
        "config_digest": summaries[0]["config_digest"],
        "metrics": metrics,
        "verdict_fractions": verdict_fractions,
        "flag_fractions": flags,
    }


def _write_summary_csv(path: Path, summaries: Sequence[dict]) -> None:
    keys = list(summaries[0].keys())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(keys)
    for summary in summaries:
        row = []
        for key in keys:
            value = summary[key]
            row.append("" if value is None else value)
        writer.writerow(row)
    path.write_text(buf.getvalue())


def run_experiment(
    config: ExperimentConfig, out_dir: str | Path, jobs: int = 1
) -> dict:
    """Run all replicas, write the output files, return the aggregate report.

    Workers only compute; the parent process writes every file in replica
    order, so parallel and serial execution produce identical bytes.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_dict = config.to_dict()
    tasks = [(config_dict, r) for r in range(config.replicas)]
    if jobs > 1 and config.replicas > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, config.replicas)) as pool:
            payloads = list(pool.map(_replica_payload_star, tasks))
    else:
        payloads = [_replica_payload_star(task) for task in tasks]
    summaries = []
    for r, (summary, line_bytes) in enumerate(payloads):
        (out / f"replica_{r:04d}.jsonl").write_bytes(line_bytes)
        summaries.append(summary)
    _write_summary_csv(out / "summary.csv", summaries)
    report = aggregate(summaries)
    (out / "aggregate.json").write_text(json.dumps(report, indent=2) + "\n")
    (out / "config.json").write_text(json.dumps(config_dict, indent=2) + "\n")
    return report


def read_summaries(out_dir: str | Path) -> list[dict]:
    """Load replica summaries back from a results directory's CSV."""
    path = Path(out_dir) / "summary.csv"
    if not path.exists():
        raise FileNotFoundError(f"no summary.csv under {out_dir}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path} has no replica rows")
    summaries = []
    for row in rows:
        parsed: dict = {}
        for key, text in row.items():
            parsed[key] = _parse_csv_value(key, text)
        summaries.append(parsed)
    return summaries


def _parse_csv_value(key: str, text: str):
    if text == "":
        return None
    if key == "config_digest" or key.startswith("verdict_"):
        return text
    if key in ("replica", "rounds"):
        return int(text)
    if text in ("True", "False"):
        return text == "True"
    return float(text)
