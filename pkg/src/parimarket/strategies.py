"""Betting strategies.

A strategy sees the public round context (wealth table, the environment's
conditional outcome mean, any observable state, past records) and returns a
stake fraction plus an allocation over outcome components. Flow-aware
strategies may also revise the allocation between sub-steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    RoundRecord,
    SimplexPoint,
    StrategyDecision,
    WealthVector,
    make_simplex,
    simplex_project,
    sq_distance,
)

# Tiny admixture of the ideal forecast that keeps perturbed allocations
# strictly inside the simplex.
_SUPPORT_MIX = 1e-9


@dataclass(frozen=True)
class DecisionContext:
    """Everything an agent may condition on when betting."""

    round_index: int
    wealth: WealthVector
    agent_index: int
    oracle: SimplexPoint
    observable: object
    history: Sequence[RoundRecord]
    substep: int | None = None
    signals: tuple | None = None
    current_allocation: SimplexPoint | None = None


class Strategy:
    """Base class; subclasses implement :meth:`decide`."""

    def decide(self, ctx: DecisionContext) -> StrategyDecision:
        raise NotImplementedError

    def substep_allocation(self, ctx: DecisionContext) -> SimplexPoint:
        """Allocation for a later sub-step; by default the previous one."""
        if ctx.current_allocation is None:
            raise ValueError("no current allocation to carry forward")
        return ctx.current_allocation

    def observe(self, record: RoundRecord) -> None:
        """Called after each settled round; default does nothing."""


class _StakePolicy:
    """Stake fraction per round: a constant, or a schedule whose last entry
    persists."""

    def __init__(self, stake: float | Sequence[float]):
        if isinstance(stake, (int, float)):
            schedule = (float(stake),)
        else:
            schedule = tuple(float(s) for s in stake)
        if not schedule:
            raise ValueError("empty stake schedule")
        for s in schedule:
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"stake fraction {s!r} outside [0, 1]")
        self._schedule = schedule

    def at(self, round_index: int) -> float:
        i = min(round_index, len(self._schedule) - 1)
        return self._schedule[i]

    @property
    def minimum(self) -> float:
        return min(self._schedule)


class TruthTeller(Strategy):
    """Bets the environment's conditional mean exactly."""

    def __init__(self, stake: float | Sequence[float] = 1.0):
        self._stake = _StakePolicy(stake)

    def decide(self, ctx: DecisionContext) -> StrategyDecision:
        return StrategyDecision(self._stake.at(ctx.round_index), ctx.oracle)


class FlowTruthTeller(TruthTeller):
    """Truth-teller that re-reads the conditional mean at every sub-step."""

    def substep_allocation(self, ctx: DecisionContext) -> SimplexPoint:
        return ctx.oracle


class NoisyTruthTeller(Strategy):
    """Truth-teller with a decaying random perturbation.

    The perturbation radius at round t is ``noise_scale * (t + 1) ** -decay``;
    its direction is an isotropic zero-sum vector, and the perturbed point is
    projected back onto the simplex, so the distance to the conditional mean
    never exceeds the radius. With ``decay > 0.5`` the squared distances are
    summable; smaller decays are only allowed explicitly since they make the
    strategy's forecast error accumulate without bound.
    """

    def __init__(
        self,
        noise_scale: float,
        decay: float,
        rng: np.random.Generator,
        stake: float | Sequence[float] = 1.0,
        allow_divergent: bool = False,
    ):
        if noise_scale < 0.0:
            raise ValueError(f"noise scale {noise_scale!r} must be non-negative")
        if decay <= 0.5 and noise_scale > 0.0 and not allow_divergent:
            raise ValueError(
                f"decay {decay!r} gives non-summable squared perturbations; "
                f"pass allow_divergent=True if that is intended"
            )
        self._scale = float(noise_scale)
        self._decay = float(decay)
        self._rng = rng
        self._stake = _StakePolicy(stake)
        self.squared_error_total = 0.0

    def decide(self, ctx: DecisionContext) -> StrategyDecision:
        mu = ctx.oracle
        nu = self._stake.at(ctx.round_index)
        if self._scale == 0.0:
            return StrategyDecision(nu, mu)
        direction = self._rng.standard_normal(mu.dim)
        direction -= direction.mean()
        norm = float(np.linalg.norm(direction))
        if norm == 0.0:
            return StrategyDecision(nu, mu)
        radius = self._scale * (ctx.round_index + 1.0) ** (-self._decay)
        perturbed = mu.as_array() + (radius / norm) * direction
        projected = simplex_project(perturbed)
        allocation = make_simplex(
            [
                (1.0 - _SUPPORT_MIX) * projected[n] + _SUPPORT_MIX * mu[n]
                for n in range(mu.dim)
            ]
        )
        self.squared_error_total += sq_distance(allocation, mu)
        return StrategyDecision(nu, allocation)


class ConstantStrategy(Strategy):
    """Always bets the same full-support allocation with a positive stake.

    For sub-step play an explicit per-sub-step ``path`` may be committed
    upfront; otherwise the single allocation is repeated.
    """

    def __init__(
        self,
        stake: float | Sequence[float],
        allocation: SimplexPoint,
        path: tuple[SimplexPoint, ...] | None = None,
    ):
        self._stake = _StakePolicy(stake)
        if self._stake.minimum <= 0.0:
            raise ValueError("constant strategy requires a strictly positive stake")
        if allocation.min_component() <= 0.0:
            raise ValueError("constant strategy requires a full-support allocation")
        if path is not None:
            path = tuple(path)
            for p in path:
                if p.min_component() <= 0.0:
                    raise ValueError("constant strategy requires full-support sub-step allocations")
        self._allocation = allocation
        self._path = path

    def decide(self, ctx: DecisionContext) -> StrategyDecision:
        return StrategyDecision(self._stake.at(ctx.round_index), self._allocation, self._path)


class EmpiricalLearner(Strategy):
    """Bets the smoothed running average of past outcomes.

    With smoothing mass ``beta`` spread uniformly, the allocation after t
    observed rounds is ``(beta / N + observed total) / (beta + t)`` per
    component, so it always has full support.
    """

    def __init__(self, stake: float | Sequence[float] = 1.0, smoothing: float = 1.0):
        if smoothing <= 0.0:
            raise ValueError("smoothing mass must be positive")
        self._stake = _StakePolicy(stake)
        self._beta = float(smoothing)
        self._totals: list[float] | None = None
        self._count = 0

    def decide(self, ctx: DecisionContext) -> StrategyDecision:
        dim = ctx.oracle.dim
        if self._totals is None:
            self._totals = [0.0] * dim
        denom = self._beta + self._count
        allocation = make_simplex(
            [(self._beta / dim + self._totals[n]) / denom for n in range(dim)]
        )
        return StrategyDecision(self._stake.at(ctx.round_index), allocation)

    def observe(self, record: RoundRecord) -> None:
        if self._totals is None:
            self._totals = [0.0] * record.realized.dim
        for n in range(record.realized.dim):
            self._totals[n] += record.realized[n]
        self._count += 1


def build_strategy(config: dict, rng: np.random.Generator) -> Strategy:
    """Construct a strategy from its configuration mapping."""
    kind = config.get("kind")
    stake = config.get("stake", 1.0)
    if kind == "truth_teller":
        return TruthTeller(stake)
    if kind == "flow_truth_teller":
        return FlowTruthTeller(stake)
    if kind == "noisy_truth_teller":
        return NoisyTruthTeller(
            noise_scale=config["noise_scale"],
            decay=config["decay"],
            rng=rng,
            stake=stake,
            allow_divergent=config.get("allow_divergent", False),
        )
    if kind == "constant":
        raw_path = config.get("allocation_path")
        path = tuple(make_simplex(p) for p in raw_path) if raw_path is not None else None
        return ConstantStrategy(stake, make_simplex(config["allocation"]), path=path)
    if kind == "empirical":
        return EmpiricalLearner(stake, smoothing=config.get("smoothing", 1.0))
    raise ValueError(f"unknown strategy kind {kind!r}")
