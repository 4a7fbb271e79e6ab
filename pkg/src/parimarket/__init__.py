"""Parimutuel betting-game simulator.

Agents repeatedly stake wealth on the components of a simplex-valued outcome;
pools are redistributed in proportion to bets on what happened. The package
provides the settlement engines (single-step and sub-step debit schedules),
outcome environments, betting strategies, forecast decoders, survival and
convergence diagnostics, and a deterministic Monte Carlo harness with a CLI.
"""

from .core import (
    DebitSchedule,
    RoundRecord,
    SimplexPoint,
    StrategyDecision,
    WealthVector,
    make_simplex,
    simplex_project,
    sq_distance,
    substream,
    unit_vertex,
)
from .diagnostics import (
    ConvergenceReport,
    DiagnosticsAccumulator,
    DiagnosticsSeries,
    SubmartingaleCertificate,
    Verdict,
    convergence_report,
    kl_increment,
    log_wealth_slope,
    submartingale_check,
    survival_verdict,
)
from .engine import (
    ProfileError,
    ProfileValidation,
    Settlement,
    market_forecast,
    run_discrete,
    settle_round,
    validate_profile,
)
from .environments import (
    BoundedVariableEnvironment,
    Environment,
    IIDCategorical,
    MarkovEmissionEnvironment,
    MarkovSpec,
    OutcomeDistribution,
    ProgressiveRevelationEnvironment,
    build_environment,
)
from .estimators import (
    DecodedValue,
    MomentEstimate,
    decode_bounded_mean,
    decode_moments,
    decode_overlapping,
    decode_partition,
)
from .flow import (
    FlowSettlement,
    as_flow,
    run_flow,
    settle_flow_round,
    substep_forecasts,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    ReplicaResult,
    aggregate,
    load_config,
    run_experiment,
    run_replica,
)
from .strategies import (
    ConstantStrategy,
    DecisionContext,
    EmpiricalLearner,
    FlowTruthTeller,
    NoisyTruthTeller,
    Strategy,
    TruthTeller,
    build_strategy,
)

__version__ = "0.1.0"

__all__ = [
    "BoundedVariableEnvironment",
    "ConfigError",
    "ConstantStrategy",
    "ConvergenceReport",
    "DebitSchedule",
    "DecisionContext",
    "DiagnosticsAccumulator",
    "DecodedValue",
    "DiagnosticsSeries",
    "EmpiricalLearner",
    "Environment",
    "ExperimentConfig",
    "FlowSettlement",
    "FlowTruthTeller",
    "IIDCategorical",
    "MarkovEmissionEnvironment",
    "MarkovSpec",
    "MomentEstimate",
    "NoisyTruthTeller",
    "OutcomeDistribution",
    "ProfileError",
    "ProfileValidation",
    "ProgressiveRevelationEnvironment",
    "ReplicaResult",
    "RoundRecord",
    "Settlement",
    "SimplexPoint",
    "Strategy",
    "StrategyDecision",
    "SubmartingaleCertificate",
    "TruthTeller",
    "Verdict",
    "WealthVector",
    "aggregate",
    "as_flow",
    "build_environment",
    "build_strategy",
    "convergence_report",
    "decode_bounded_mean",
    "decode_moments",
    "decode_overlapping",
    "decode_partition",
    "kl_increment",
    "load_config",
    "log_wealth_slope",
    "make_simplex",
    "market_forecast",
    "run_discrete",
    "run_experiment",
    "run_flow",
    "run_replica",
    "settle_flow_round",
    "settle_round",
    "simplex_project",
    "sq_distance",
    "submartingale_check",
    "substep_forecasts",
    "substream",
    "survival_verdict",
    "unit_vertex",
    "validate_profile",
]
