"""Single-step settlement of the betting game.

Each round every agent stakes a fraction of wealth and spreads it over the
outcome components; each component's pool is then paid out in proportion to the
realized outcome weight and each bettor's share of that pool. Total wealth is
conserved, so everything is tracked as shares of 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import (
    ACCUMULATED_TOL,
    UNDERFLOW_FLOOR,
    RoundRecord,
    SimplexPoint,
    StrategyDecision,
    WealthVector,
    make_simplex,
    sq_distance,
)


class ProfileError(RuntimeError):
    """A betting profile that would break settlement (empty pool on some
    component, or no money staked at all)."""

    def __init__(self, message: str, round_index: int | None = None):
        if round_index is not None:
            message = f"round {round_index}: {message}"
        super().__init__(message)
        self.round_index = round_index


@dataclass(frozen=True)
class ProfileValidation:
    """Outcome of checking a betting profile before settlement."""

    ok: bool
    reasons: tuple[str, ...]
    component_bet_positive: tuple[bool, ...]


def _stake_totals(
    wealth: WealthVector, decisions: Sequence[StrategyDecision], allocations: Sequence[SimplexPoint]
) -> tuple[float, list[float]]:
    """Total staked wealth and per-component bet totals.

    The accumulation order (agents in index order, grouping ``(lam * nu) * w``)
    is part of the contract: the flow engine mirrors it so that a one-step
    schedule settles bit for bit like this engine.
    """
    dim = allocations[0].dim
    staked = 0.0
    totals = [0.0] * dim
    for m in range(wealth.agent_count):
        w = wealth[m]
        nu = decisions[m].stake_fraction
        staked += nu * w
        lam = allocations[m]
        for n in range(dim):
            totals[n] += (lam[n] * nu) * w
    return staked, totals


def validate_profile(
    wealth: WealthVector, decisions: Sequence[StrategyDecision]
) -> ProfileValidation:
    """Check that settlement is well defined for this profile.

    Sufficient (and checked first): some agent with positive wealth stakes a
    positive fraction on a full-support allocation. Failing that, the per
    component bet totals are inspected directly.
    """
    if len(decisions) != wealth.agent_count:
        raise ValueError("one decision per agent required")
    allocations = [d.allocation for d in decisions]
    dim = allocations[0].dim
    for lam in allocations:
        if lam.dim != dim:
            raise ValueError("allocation dimensions differ across agents")

    staked, totals = _stake_totals(wealth, decisions, allocations)
    positive = tuple(t > 0.0 for t in totals)
    reasons: list[str] = []
    if staked <= 0.0:
        reasons.append("no positive staker")
    else:
        for n, p in enumerate(positive):
            if not p:
                reasons.append(f"component {n + 1} has zero total bet")
    if not reasons:
        full_support = any(
            wealth[m] > 0.0
            and decisions[m].stake_fraction > 0.0
            and allocations[m].min_component() > 0.0
            for m in range(wealth.agent_count)
        )
        if not full_support:
            reasons.append(
                "no positive-wealth agent has a positive stake with full-support allocation"
            )
    return ProfileValidation(ok=not reasons, reasons=tuple(reasons), component_bet_positive=positive)


def market_forecast(
    wealth: WealthVector, decisions: Sequence[StrategyDecision]
) -> tuple[float, SimplexPoint]:
    """Wealth-weighted aggregate of the agents' bets.

    Returns the aggregate stake fraction and the normalized per-component bet
    proportions, i.e. the market's own prediction of the outcome.
    """
    allocations = [d.allocation for d in decisions]
    staked, totals = _stake_totals(wealth, decisions, allocations)
    if staked <= 0.0:
        raise ProfileError("no positive staker")
    return staked, make_simplex([t / staked for t in totals])


@dataclass(frozen=True)
class Settlement:
    """Post-round wealth together with the diagnostics of how it got there."""

    wealth: WealthVector
    log_growth: tuple[float, ...]
    conservation_drift: float
    forecast_nu: float
    forecast: SimplexPoint


def settle_round(
    wealth: WealthVector,
    decisions: Sequence[StrategyDecision],
    realized: SimplexPoint,
    round_index: int | None = None,
) -> Settlement:
    """Settle one round: pay out each component pool by realized weight.

    Wealth is recomputed linearly (pool arithmetic) and renormalized, with the
    departure from unit total reported as ``conservation_drift``. Log growth is
    computed separately in ratio form, so it remains exact for agents whose
    linear share underflows; shares below the underflow floor are clamped to
    zero and flagged.
    """
    allocations = [d.allocation for d in decisions]
    dim = realized.dim
    if allocations[0].dim != dim:
        raise ValueError("realized outcome dimension does not match allocations")

    staked, totals = _stake_totals(wealth, decisions, allocations)
    if staked <= 0.0:
        raise ProfileError("no positive staker", round_index)
    for n in range(dim):
        if totals[n] <= 0.0:
            raise ProfileError(f"component {n + 1} has zero total bet", round_index)
    forecast = make_simplex([t / staked for t in totals])

    m_count = wealth.agent_count
    new_wealth = [0.0] * m_count
    log_growth = [0.0] * m_count
    for m in range(m_count):
        w = wealth[m]
        nu = decisions[m].stake_fraction
        lam = allocations[m]
        pool_payout = 0.0
        ratio = 0.0
        for n in range(dim):
            x = realized[n]
            if x == 0.0:
                continue
            bet = (lam[n] * nu) * w
            if bet > 0.0:
                pool_payout += (bet / totals[n]) * x
            ratio += (lam[n] / forecast[n]) * x
        new_wealth[m] = staked * pool_payout + (1.0 - nu) * w
        g = nu * ratio + (1.0 - nu)
        log_growth[m] = math.log(g) if g > 0.0 else -math.inf

    total = math.fsum(new_wealth)
    if not math.isfinite(total) or total <= 0.0:
        raise ProfileError(f"settlement produced total wealth {total!r}", round_index)
    drift = total - 1.0
    if abs(drift) > ACCUMULATED_TOL:
        raise ProfileError(f"conservation drift {drift!r} exceeds tolerance", round_index)

    flags = list(wealth.underflow_flags)
    shares = []
    for m in range(m_count):
        s = new_wealth[m] / total
        if 0.0 < s < UNDERFLOW_FLOOR:
            s = 0.0
            flags[m] = True
        if not math.isfinite(s):
            raise ProfileError(f"non-finite wealth share for agent {m}", round_index)
        shares.append(s)
    settled = WealthVector(tuple(shares), tuple(flags))
    return Settlement(
        wealth=settled,
        log_growth=tuple(log_growth),
        conservation_drift=drift,
        forecast_nu=staked,
        forecast=forecast,
    )


def run_discrete(
    environment,
    strategies,
    rounds: int,
    initial_wealth: WealthVector | None = None,
    on_round: Callable[[RoundRecord], None] | None = None,
) -> list[RoundRecord]:
    """Play the single-step game for ``rounds`` rounds and return the audit trail.

    Per round: the environment's conditional outcome law is snapshotted, each
    strategy decides from the public context, the profile is validated, the
    round settles on the realized outcome, strategies observe it, and the
    environment advances.
    """
    from .strategies import DecisionContext

    if rounds < 1:
        raise ValueError("need at least one round")
    m_count = len(strategies)
    wealth = initial_wealth if initial_wealth is not None else WealthVector.uniform(m_count)
    if wealth.agent_count != m_count:
        raise ValueError("initial wealth does not match the number of strategies")

    records: list[RoundRecord] = []
    history: list[RoundRecord] = records
    for t in range(rounds):
        oracle = environment.oracle()
        floor = environment.epsilon
        if oracle.min_component() < floor - 1e-12:
            raise RuntimeError(
                f"round {t}: conditional outcome mean fell below the floor {floor}"
            )
        observable = environment.observable_state()
        decisions = []
        for m in range(m_count):
            ctx = DecisionContext(
                round_index=t,
                wealth=wealth,
                agent_index=m,
                oracle=oracle,
                observable=observable,
                history=history,
            )
            decisions.append(strategies[m].decide(ctx))
        realized = environment.step()
        settlement = settle_round(wealth, decisions, realized, round_index=t)
        record = RoundRecord(
            round_index=t,
            wealth_before=wealth,
            wealth_after=settlement.wealth,
            decisions=tuple(decisions),
            forecast_nu=settlement.forecast_nu,
            forecast=settlement.forecast,
            oracle=oracle,
            realized=realized,
            log_growth=settlement.log_growth,
            sq_forecast_error=sq_distance(settlement.forecast, oracle),
            conservation_drift=settlement.conservation_drift,
        )
        records.append(record)
        for strategy in strategies:
            strategy.observe(record)
        wealth = settlement.wealth
        if on_round is not None:
            on_round(record)
    return records
