"""Shared value types for the betting game: probability vectors on the simplex,
wealth shares, per-round decisions, debit schedules and audit records, plus the
deterministic random-stream derivation used by every stochastic component.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

# Tolerances: tight at construction, looser after long floating-point accumulation.
CONSTRUCTION_TOL = 1e-12
ACCUMULATED_TOL = 1e-9

# Wealth shares below this are clamped to zero and flagged.
UNDERFLOW_FLOOR = 1e-300


@dataclass(frozen=True)
class SimplexPoint:
    """A probability vector: non-negative weights summing to one."""

    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        ws = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "weights", ws)
        if not ws:
            raise ValueError("simplex point needs at least one component")
        for w in ws:
            if not math.isfinite(w):
                raise ValueError(f"non-finite component {w!r}")
            if w < 0.0:
                raise ValueError(f"negative component {w!r}")
        total = math.fsum(ws)
        if abs(total - 1.0) > CONSTRUCTION_TOL:
            raise ValueError(f"components sum to {total!r}, expected 1 within {CONSTRUCTION_TOL}")

    def __len__(self) -> int:
        return len(self.weights)

    def __getitem__(self, index: int) -> float:
        return self.weights[index]

    def __iter__(self) -> Iterator[float]:
        return iter(self.weights)

    @property
    def dim(self) -> int:
        return len(self.weights)

    def min_component(self) -> float:
        return min(self.weights)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


def make_simplex(values: Sequence[float]) -> SimplexPoint:
    """Build a SimplexPoint, absorbing small accumulation error in the sum.

    Values already summing to one within the construction tolerance are kept
    exactly; sums off by at most ``ACCUMULATED_TOL`` are renormalized; anything
    further off is rejected.
    """
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("empty input")
    for v in vals:
        if not math.isfinite(v):
            raise ValueError(f"non-finite entry {v!r}")
        if v < 0.0:
            raise ValueError(f"negative entry {v!r}")
    total = math.fsum(vals)
    if total == 0.0:
        raise ValueError("all entries are zero")
    if abs(total - 1.0) <= CONSTRUCTION_TOL:
        return SimplexPoint(tuple(vals))
    if abs(total - 1.0) <= ACCUMULATED_TOL:
        return SimplexPoint(tuple(v / total for v in vals))
    raise ValueError(f"entries sum to {total!r}, outside tolerance {ACCUMULATED_TOL}")


def simplex_project(values: Sequence[float]) -> SimplexPoint:
    """Euclidean projection onto the probability simplex.

    Uses the sorted-threshold method: find the largest prefix of the sorted
    values whose shifted mean stays positive, subtract that threshold and clip.
    Idempotent (to rounding) on points already in the simplex.
    """
    v = np.asarray([float(x) for x in values], dtype=float)
    if v.size == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite entry")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, v.size + 1) > (css - 1.0))[0][-1]
    theta = (css[rho] - 1.0) / float(rho + 1)
    projected = np.maximum(v - theta, 0.0)
    return make_simplex(projected.tolist())


def sq_distance(a: SimplexPoint, b: SimplexPoint) -> float:
    """Squared Euclidean distance between two simplex points."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return math.fsum((x - y) * (x - y) for x, y in zip(a.weights, b.weights))


def unit_vertex(dim: int, index: int) -> SimplexPoint:
    """The simplex vertex with all mass on one component."""
    if not 0 <= index < dim:
        raise ValueError(f"vertex index {index} out of range for dimension {dim}")
    return SimplexPoint(tuple(1.0 if i == index else 0.0 for i in range(dim)))


@dataclass(frozen=True)
class WealthVector:
    """Agents' shares of the (constant, normalized) total wealth.

    ``underflow_flags`` marks agents whose share was clamped to zero after
    falling below the underflow floor; the flag persists once set.
    """

    shares: tuple[float, ...]
    underflow_flags: tuple[bool, ...] = ()

    def __post_init__(self) -> None:
        shares = tuple(float(s) for s in self.shares)
        object.__setattr__(self, "shares", shares)
        if not shares:
            raise ValueError("wealth vector needs at least one agent")
        flags = self.underflow_flags
        if not flags:
            flags = tuple(False for _ in shares)
        object.__setattr__(self, "underflow_flags", tuple(bool(f) for f in flags))
        if len(self.underflow_flags) != len(shares):
            raise ValueError("underflow flags do not match the number of agents")
        for s in shares:
            if not math.isfinite(s):
                raise ValueError(f"non-finite share {s!r}")
            if s < 0.0:
                raise ValueError(f"negative share {s!r}")
        total = math.fsum(shares)
        if abs(total - 1.0) > ACCUMULATED_TOL:
            raise ValueError(f"shares sum to {total!r}, expected 1 within {ACCUMULATED_TOL}")

    def __len__(self) -> int:
        return len(self.shares)

    def __getitem__(self, index: int) -> float:
        return self.shares[index]

    @property
    def agent_count(self) -> int:
        return len(self.shares)

    @classmethod
    def uniform(cls, agent_count: int) -> "WealthVector":
        if agent_count < 1:
            raise ValueError("need at least one agent")
        return cls.from_amounts([1.0] * agent_count)

    @classmethod
    def from_amounts(cls, amounts: Sequence[float]) -> "WealthVector":
        """Normalize strictly positive wealth amounts into shares of 1."""
        vals = [float(a) for a in amounts]
        if not vals:
            raise ValueError("empty input")
        for a in vals:
            if not math.isfinite(a) or a <= 0.0:
                raise ValueError(f"initial wealth must be strictly positive, got {a!r}")
        total = math.fsum(vals)
        return cls(tuple(a / total for a in vals))


@dataclass(frozen=True)
class StrategyDecision:
    """One agent's choice for a round: stake fraction and bet allocation.

    For flow rounds ``allocation_path`` holds one allocation per sub-step and
    ``allocation`` is the first of them.
    """

    stake_fraction: float
    allocation: SimplexPoint
    allocation_path: tuple[SimplexPoint, ...] | None = None

    def __post_init__(self) -> None:
        nu = float(self.stake_fraction)
        object.__setattr__(self, "stake_fraction", nu)
        if not (0.0 <= nu <= 1.0):
            raise ValueError(f"stake fraction {nu!r} outside [0, 1]")
        if self.allocation_path is not None:
            path = tuple(self.allocation_path)
            object.__setattr__(self, "allocation_path", path)
            if not path:
                raise ValueError("empty allocation path")
            for p in path:
                if p.dim != self.allocation.dim:
                    raise ValueError("allocation path dimension mismatch")

    def path(self, substeps: int) -> tuple[SimplexPoint, ...]:
        """The allocation per sub-step, repeating a static allocation as needed."""
        if self.allocation_path is None:
            return (self.allocation,) * substeps
        if len(self.allocation_path) != substeps:
            raise ValueError(
                f"allocation path has {len(self.allocation_path)} steps, schedule has {substeps}"
            )
        return self.allocation_path


@dataclass(frozen=True)
class DebitSchedule:
    """Within-round debit masses: how much of the staked money is converted to
    bets at each sub-step. Masses are non-negative and total exactly one."""

    substep_weights: tuple[float, ...]

    def __post_init__(self) -> None:
        ws = tuple(float(w) for w in self.substep_weights)
        object.__setattr__(self, "substep_weights", ws)
        if not ws:
            raise ValueError("schedule needs at least one sub-step")
        for w in ws:
            if not math.isfinite(w) or w < 0.0:
                raise ValueError(f"invalid sub-step weight {w!r}")
        if abs(math.fsum(ws) - 1.0) > CONSTRUCTION_TOL:
            raise ValueError("sub-step weights must total one")

    def __len__(self) -> int:
        return len(self.substep_weights)

    @property
    def substeps(self) -> int:
        return len(self.substep_weights)

    @classmethod
    def equal(cls, substeps: int) -> "DebitSchedule":
        """Evenly spread debiting over ``substeps`` sub-steps."""
        if substeps < 1:
            raise ValueError("need at least one sub-step")
        return cls.from_weights([1.0 / substeps] * substeps)

    @classmethod
    def from_weights(cls, weights: Sequence[float]) -> "DebitSchedule":
        """Build a schedule, nudging the largest weight so the total is exact."""
        ws = [float(w) for w in weights]
        total = math.fsum(ws)
        if not math.isfinite(total) or abs(total - 1.0) > CONSTRUCTION_TOL:
            raise ValueError(f"sub-step weights sum to {total!r}, expected 1")
        i = max(range(len(ws)), key=ws.__getitem__)
        ws[i] += 1.0 - total
        return cls(tuple(ws))


@dataclass(frozen=True)
class RoundRecord:
    """Full audit of one settled round.

    ``forecast`` and ``oracle`` hold a single point for discrete rounds and one
    point per sub-step (with ``substep_weights`` set) for flow rounds.
    ``log_growth`` is computed in ratio form, so it stays finite long after an
    agent's linear share has underflowed.
    """

    round_index: int
    wealth_before: WealthVector
    wealth_after: WealthVector
    decisions: tuple[StrategyDecision, ...]
    forecast_nu: float
    forecast: SimplexPoint | tuple[SimplexPoint, ...]
    oracle: SimplexPoint | tuple[SimplexPoint, ...]
    realized: SimplexPoint
    log_growth: tuple[float, ...]
    sq_forecast_error: float
    conservation_drift: float = 0.0
    substep_weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.sq_forecast_error < 0.0 or self.sq_forecast_error > 2.0 + ACCUMULATED_TOL:
            raise ValueError(f"squared forecast error {self.sq_forecast_error!r} outside [0, 2]")
        if len(self.log_growth) != self.wealth_before.agent_count:
            raise ValueError("log growth entries do not match the number of agents")

    @property
    def is_flow(self) -> bool:
        return self.substep_weights is not None

    def forecast_points(self) -> tuple[SimplexPoint, ...]:
        f = self.forecast
        return f if isinstance(f, tuple) else (f,)

    def oracle_points(self) -> tuple[SimplexPoint, ...]:
        o = self.oracle
        return o if isinstance(o, tuple) else (o,)


def substream(root_seed: int, replica: int, consumer: str) -> np.random.Generator:
    """Independent deterministic random stream for one consumer of one replica.

    Streams are keyed by (replica, consumer name), so results do not depend on
    the order in which consumers draw or on how replicas are scheduled.
    """
    digest = hashlib.sha256(consumer.encode("utf-8")).digest()
    tag = int.from_bytes(digest[:8], "big")
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(int(replica), tag))
    return np.random.Generator(np.random.PCG64(seq))
