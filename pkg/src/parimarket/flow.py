"""Within-round betting on a debit schedule.

A round is split into sub-steps. Each agent commits a stake fraction at the
start, and the schedule says how much of that stake is converted to bets at
each sub-step; allocations may be revised between sub-steps as the environment
reveals partial information. All pools settle together against the single
realized outcome, at round-start wealth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import (
    ACCUMULATED_TOL,
    UNDERFLOW_FLOOR,
    DebitSchedule,
    RoundRecord,
    SimplexPoint,
    StrategyDecision,
    WealthVector,
    make_simplex,
    sq_distance,
)
from .engine import ProfileError


@dataclass(frozen=True)
class FlowSettlement:
    """Post-round wealth plus per-sub-step market forecasts."""

    wealth: WealthVector
    log_growth: tuple[float, ...]
    conservation_drift: float
    forecast_nu: float
    forecasts: tuple[SimplexPoint, ...]


def substep_forecasts(
    wealth: WealthVector,
    decisions: Sequence[StrategyDecision],
    schedule: DebitSchedule,
) -> tuple[float, tuple[SimplexPoint, ...]]:
    """Aggregate stake and the market's bet proportions at every sub-step.

    Proportions are taken over round-start wealth and stakes, so the debit
    weights cancel and each sub-step's forecast depends only on that sub-step's
    allocations.
    """
    staked, per_step_totals = _flow_totals(wealth, decisions, schedule)
    if staked <= 0.0:
        raise ProfileError("no positive staker")
    forecasts = tuple(
        make_simplex([t / staked for t in totals]) for totals in per_step_totals
    )
    return staked, forecasts


def _flow_totals(
    wealth: WealthVector,
    decisions: Sequence[StrategyDecision],
    schedule: DebitSchedule,
) -> tuple[float, list[list[float]]]:
    """Round stake total and per-sub-step, per-component bet totals.

    The accumulation mirrors the single-step engine term for term; with a
    one-step schedule the two produce bit-identical settlements.
    """
    if len(decisions) != wealth.agent_count:
        raise ValueError("one decision per agent required")
    k = schedule.substeps
    paths = [d.path(k) for d in decisions]
    dim = paths[0][0].dim
    staked = 0.0
    per_step_totals = [[0.0] * dim for _ in range(k)]
    for m in range(wealth.agent_count):
        w = wealth[m]
        nu = decisions[m].stake_fraction
        staked += nu * w
        for j in range(k):
            lam = paths[m][j]
            if lam.dim != dim:
                raise ValueError("allocation dimensions differ across agents")
            totals = per_step_totals[j]
            for n in range(dim):
                totals[n] += (lam[n] * nu) * w
    return staked, per_step_totals


def settle_flow_round(
    wealth: WealthVector,
    decisions: Sequence[StrategyDecision],
    schedule: DebitSchedule,
    realized: SimplexPoint,
    round_index: int | None = None,
) -> FlowSettlement:
    """Settle all sub-step pools of one round against the realized outcome.

    Every sub-step with positive debit weight must have a positive pool on
    every component. Payouts scale with the debit weights; forecasts do not.
    """
    staked, per_step_totals = _flow_totals(wealth, decisions, schedule)
    if staked <= 0.0:
        raise ProfileError("no positive staker", round_index)
    k = schedule.substeps
    weights = schedule.substep_weights
    dim = realized.dim
    if len(per_step_totals[0]) != dim:
        raise ValueError("realized outcome dimension does not match allocations")
    for j in range(k):
        if weights[j] == 0.0:
            continue
        for n in range(dim):
            if per_step_totals[j][n] <= 0.0:
                raise ProfileError(
                    f"sub-step {j + 1}: component {n + 1} has zero total bet", round_index
                )
    forecasts = tuple(
        make_simplex([t / staked for t in totals]) for totals in per_step_totals
    )

    paths = [d.path(k) for d in decisions]
    m_count = wealth.agent_count
    new_wealth = [0.0] * m_count
    log_growth = [0.0] * m_count
    for m in range(m_count):
        w = wealth[m]
        nu = decisions[m].stake_fraction
        payout = 0.0
        ratio = 0.0
        for j in range(k):
            wj = weights[j]
            if wj == 0.0:
                continue
            lam = paths[m][j]
            totals = per_step_totals[j]
            forecast = forecasts[j]
            pool_payout = 0.0
            for n in range(dim):
                x = realized[n]
                if x == 0.0:
                    continue
                bet = (lam[n] * nu) * w
                if bet > 0.0:
                    pool_payout += (bet / totals[n]) * x
            payout += (staked * wj) * pool_payout
            for n in range(dim):
                x = realized[n]
                if x == 0.0:
                    continue
                ratio += (wj * (lam[n] / forecast[n])) * x
        new_wealth[m] = payout + (1.0 - nu) * w
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
    return FlowSettlement(
        wealth=settled,
        log_growth=tuple(log_growth),
        conservation_drift=drift,
        forecast_nu=staked,
        forecasts=forecasts,
    )


def flow_sq_error(
    forecasts: Sequence[SimplexPoint],
    oracles: Sequence[SimplexPoint],
    schedule: DebitSchedule,
) -> float:
    """Debit-weighted squared forecast error across the round's sub-steps."""
    if len(forecasts) != schedule.substeps or len(oracles) != schedule.substeps:
        raise ValueError("one forecast and one oracle point per sub-step required")
    return math.fsum(
        wj * sq_distance(f, mu)
        for wj, f, mu in zip(schedule.substep_weights, forecasts, oracles)
    )


def run_flow(
    environment,
    strategies,
    rounds: int,
    schedule: DebitSchedule,
    initial_wealth: WealthVector | None = None,
    on_round: Callable[[RoundRecord], None] | None = None,
) -> list[RoundRecord]:
    """Play the sub-step game for ``rounds`` rounds and return the audit trail.

    Per sub-step: the environment's current conditional outcome mean is
    snapshotted, agents place (or revise) allocations, then the next partial
    signal is revealed. Stakes are committed once, at the first sub-step.
    """
    from .strategies import DecisionContext

    if rounds < 1:
        raise ValueError("need at least one round")
    m_count = len(strategies)
    wealth = initial_wealth if initial_wealth is not None else WealthVector.uniform(m_count)
    if wealth.agent_count != m_count:
        raise ValueError("initial wealth does not match the number of strategies")
    k = schedule.substeps

    records: list[RoundRecord] = []
    for t in range(rounds):
        environment.begin_round()
        observable = environment.observable_state()
        signals: list = []
        oracles: list[SimplexPoint] = []
        stakes: list[float] = [0.0] * m_count
        committed: list[tuple[SimplexPoint, ...] | None] = [None] * m_count
        paths: list[list[SimplexPoint]] = [[] for _ in range(m_count)]
        for j in range(k):
            mu_j = environment.substep_oracle()
            floor = environment.epsilon
            if mu_j.min_component() < floor - 1e-12:
                raise RuntimeError(
                    f"round {t}: conditional outcome mean fell below the floor {floor}"
                )
            oracles.append(mu_j)
            for m in range(m_count):
                ctx = DecisionContext(
                    round_index=t,
                    wealth=wealth,
                    agent_index=m,
                    oracle=mu_j,
                    observable=observable,
                    history=records,
                    substep=j,
                    signals=tuple(signals),
                    current_allocation=paths[m][-1] if paths[m] else None,
                )
                if j == 0:
                    decision = strategies[m].decide(ctx)
                    stakes[m] = decision.stake_fraction
                    if decision.allocation_path is not None:
                        committed[m] = decision.path(k)
                        paths[m].append(committed[m][0])
                    else:
                        paths[m].append(decision.allocation)
                elif committed[m] is not None:
                    paths[m].append(committed[m][j])
                else:
                    paths[m].append(strategies[m].substep_allocation(ctx))
            sig = environment.reveal_signal()
            if sig is not None:
                signals.append(sig)
        realized = environment.end_round()
        decisions = tuple(
            StrategyDecision(stakes[m], paths[m][0], tuple(paths[m])) for m in range(m_count)
        )
        settlement = settle_flow_round(wealth, decisions, schedule, realized, round_index=t)
        record = RoundRecord(
            round_index=t,
            wealth_before=wealth,
            wealth_after=settlement.wealth,
            decisions=decisions,
            forecast_nu=settlement.forecast_nu,
            forecast=settlement.forecasts,
            oracle=tuple(oracles),
            realized=realized,
            log_growth=settlement.log_growth,
            sq_forecast_error=flow_sq_error(settlement.forecasts, oracles, schedule),
            conservation_drift=settlement.conservation_drift,
            substep_weights=schedule.substep_weights,
        )
        records.append(record)
        for strategy in strategies:
            strategy.observe(record)
        wealth = settlement.wealth
        if on_round is not None:
            on_round(record)
    return records


class DiscreteAsFlow:
    """Adapter presenting a single-step environment through the sub-step
    interface: the conditional mean is constant within the round and no
    partial signals exist, so it consumes randomness exactly like the
    single-step game."""

    def __init__(self, environment):
        self._env = environment

    @property
    def n_outcomes(self) -> int:
        return self._env.n_outcomes

    @property
    def epsilon(self) -> float:
        return self._env.epsilon

    def observable_state(self):
        return self._env.observable_state()

    def begin_round(self) -> None:
        self._oracle = self._env.oracle()

    def substep_oracle(self) -> SimplexPoint:
        return self._oracle

    def reveal_signal(self):
        return None

    def end_round(self) -> SimplexPoint:
        return self._env.step()


def as_flow(environment) -> DiscreteAsFlow:
    """Wrap a single-step environment for use with :func:`run_flow`."""
    return DiscreteAsFlow(environment)
