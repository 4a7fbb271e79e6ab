"""Executable counterparts of the theory behind the game.

Tracks the quantities that decide an agent's fate: cumulative squared
forecast error of the market, each agent's log wealth in ratio form (immune
to underflow of the linear shares), the accumulated stake-weighted KL
divergence that compensates log wealth into a submartingale, and the
derived verdicts (survival, extinction, forecast convergence, growth-rate
slopes). The submartingale property itself is checked exactly by enumerating
outcomes, not by sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .core import RoundRecord, SimplexPoint, WealthVector
from .engine import settle_round


class Verdict(str, Enum):
    SURVIVED = "SURVIVED"
    EXTINCT = "EXTINCT"
    INCONCLUSIVE = "INCONCLUSIVE"


def kl_increment(stake: float, mean: SimplexPoint, allocation: SimplexPoint) -> float:
    """Stake-weighted KL divergence of the allocation from the conditional
    mean; the per-round growth of the compensator. Requires a full-support
    allocation."""
    if mean.dim != allocation.dim:
        raise ValueError("dimension mismatch")
    if not 0.0 <= stake <= 1.0:
        raise ValueError(f"stake fraction {stake!r} outside [0, 1]")
    if allocation.min_component() <= 0.0:
        raise ValueError("allocation has a zero component")
    return stake * math.fsum(
        m * math.log(m / l) for m, l in zip(mean.weights, allocation.weights) if m > 0.0
    )


def _kl_or_inf(stake: float, mean: SimplexPoint, allocation: SimplexPoint) -> float:
    """Like :func:`kl_increment` but returns infinity instead of raising when
    the allocation misses support the mean requires."""
    total = 0.0
    for m, l in zip(mean.weights, allocation.weights):
        if m <= 0.0:
            continue
        if l <= 0.0:
            return math.inf
        total += m * math.log(m / l)
    return stake * total


def _record_kl(record: RoundRecord, agent: int) -> float:
    """Compensator increment of one agent for one settled round."""
    decision = record.decisions[agent]
    oracles = record.oracle_points()
    if record.substep_weights is None:
        return _kl_or_inf(decision.stake_fraction, oracles[0], decision.allocation)
    path = decision.path(len(record.substep_weights))
    total = 0.0
    for wj, mu, lam in zip(record.substep_weights, oracles, path):
        if wj == 0.0:
            continue
        total += wj * _kl_or_inf(1.0, mu, lam)
    return decision.stake_fraction * total


@dataclass(frozen=True)
class DiagnosticsSeries:
    """Per-round series for one run; index 0 is the pre-game state.

    ``log_wealth`` is accumulated from the ratio-form growth factors with the
    per-round renormalization folded in, so it tracks the true share exactly
    even when the linear share has been clamped to zero.
    """

    cum_sq_error: np.ndarray
    log_wealth: np.ndarray
    kl_compensator: np.ndarray

    def __post_init__(self) -> None:
        if self.log_wealth.shape != self.kl_compensator.shape:
            raise ValueError("series shapes differ")
        if self.cum_sq_error.shape[0] != self.log_wealth.shape[0]:
            raise ValueError("series lengths differ")
        if np.any(np.diff(self.cum_sq_error) < 0.0):
            raise ValueError("cumulative squared error must be non-decreasing")

    @property
    def rounds(self) -> int:
        return self.cum_sq_error.shape[0] - 1

    @property
    def agent_count(self) -> int:
        return self.log_wealth.shape[1]

    @property
    def z_value(self) -> np.ndarray:
        return self.log_wealth + self.kl_compensator

    @classmethod
    def from_records(
        cls, records: Sequence[RoundRecord], initial_wealth: WealthVector
    ) -> "DiagnosticsSeries":
        acc = DiagnosticsAccumulator(initial_wealth)
        for record in records:
            acc.update(record)
        return acc.finish()


class DiagnosticsAccumulator:
    """Streaming builder for :class:`DiagnosticsSeries`, so long runs never
    need to retain their full record list."""

    def __init__(self, initial_wealth: WealthVector):
        m = initial_wealth.agent_count
        self._cum = [0.0]
        self._logw = [[math.log(w) if w > 0.0 else -math.inf for w in initial_wealth.shares]]
        self._kl = [[0.0] * m]
        self._m = m

    def update(self, record: RoundRecord) -> None:
        if len(record.log_growth) != self._m:
            raise ValueError("record agent count changed mid-run")
        self._cum.append(self._cum[-1] + record.sq_forecast_error)
        renorm = math.log1p(record.conservation_drift)
        prev = self._logw[-1]
        self._logw.append(
            [prev[m] + record.log_growth[m] - renorm for m in range(self._m)]
        )
        prev_kl = self._kl[-1]
        self._kl.append([prev_kl[m] + _record_kl(record, m) for m in range(self._m)])

    def finish(self) -> DiagnosticsSeries:
        return DiagnosticsSeries(
            cum_sq_error=np.asarray(self._cum, dtype=float),
            log_wealth=np.asarray(self._logw, dtype=float),
            kl_compensator=np.asarray(self._kl, dtype=float),
        )


@dataclass(frozen=True)
class SubmartingaleCertificate:
    """Exact conditional drift of one agent's compensated log wealth."""

    expected_log_growth: float
    kl_term: float
    expected_z_increment: float
    tolerance: float
    ok: bool


def submartingale_check(
    environment,
    wealth: WealthVector,
    decisions: Sequence,
    tracked: int,
    tolerance: float = 1e-10,
) -> SubmartingaleCertificate:
    """Certify that the tracked agent's compensated log wealth cannot drift
    down, by settling the round once per possible outcome.

    The conditional expectation is exact: the environment must expose its
    one-step outcome distribution, and each atom is settled through the real
    engine. The tracked agent needs a full-support allocation.
    """
    distribution = environment.outcome_distribution()
    mean = distribution.expectation()
    decision = decisions[tracked]
    kl = kl_increment(decision.stake_fraction, mean, decision.allocation)
    expected = 0.0
    for prob, outcome in distribution.atoms:
        if prob == 0.0:
            continue
        settlement = settle_round(wealth, decisions, outcome)
        expected += prob * settlement.log_growth[tracked]
    z_increment = expected + kl
    return SubmartingaleCertificate(
        expected_log_growth=expected,
        kl_term=kl,
        expected_z_increment=z_increment,
        tolerance=tolerance,
        ok=z_increment >= -tolerance,
    )


def log_wealth_slope(series: DiagnosticsSeries, start: int, stop: int, agent: int) -> float:
    """Least-squares growth rate of one agent's log wealth over rounds
    [start, stop], from the ratio-form series."""
    if not 0 <= start < stop <= series.rounds:
        raise ValueError(f"window [{start}, {stop}] out of range for {series.rounds} rounds")
    if stop - start < 100:
        raise ValueError("window too short for a meaningful slope (need at least 100 rounds)")
    y = series.log_wealth[start : stop + 1, agent]
    if not np.all(np.isfinite(y)):
        raise ValueError("log wealth is not finite over the window")
    x = np.arange(start, stop + 1, dtype=float)
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def survival_verdict(
    series: DiagnosticsSeries,
    tail_fraction: float = 0.1,
    floor: float = 1e-3,
    extinction_threshold: float = 1e-6,
) -> tuple[Verdict, ...]:
    """Classify each agent from its wealth-share trajectory.

    SURVIVED requires the share to stay at or above the floor throughout the
    tail window; EXTINCT requires the final share at or below the extinction
    threshold; anything else is INCONCLUSIVE.
    """
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError(f"tail fraction {tail_fraction!r} outside (0, 1]")
    if extinction_threshold >= floor:
        raise ValueError("extinction threshold must lie below the survival floor")
    tail_len = max(1, int(round(tail_fraction * series.rounds)))
    tail = series.log_wealth[-tail_len:, :]
    verdicts = []
    log_floor = math.log(floor)
    log_ext = math.log(extinction_threshold)
    for m in range(series.agent_count):
        if np.min(tail[:, m]) >= log_floor:
            verdicts.append(Verdict.SURVIVED)
        elif series.log_wealth[-1, m] <= log_ext:
            verdicts.append(Verdict.EXTINCT)
        else:
            verdicts.append(Verdict.INCONCLUSIVE)
    return tuple(verdicts)


@dataclass(frozen=True)
class ConvergenceReport:
    """Decay diagnosis of the market's squared forecast error."""

    total: float
    windows: tuple[tuple[int, int, float], ...]
    delta: float
    passed: bool


def convergence_report(
    series: DiagnosticsSeries, delta: float = 0.01, levels: int = 2
) -> ConvergenceReport:
    """Check summability of the squared forecast error via dyadic tail windows.

    The last ``levels`` windows halve toward the start of the run (for two
    levels: [T/4, T/2] and [T/2, T]). The report passes when the window sums
    strictly decrease and the final one falls below ``delta``.
    """
    if levels < 1:
        raise ValueError("need at least one window")
    t = series.rounds
    if t >> levels < 1:
        raise ValueError(f"{t} rounds cannot form {levels} dyadic windows")
    cum = series.cum_sq_error
    windows = []
    for level in range(levels, 0, -1):
        t0 = t >> level
        t1 = t >> (level - 1)
        windows.append((t0, t1, float(cum[t1] - cum[t0])))
    sums = [w[2] for w in windows]
    decreasing = all(a > b for a, b in zip(sums, sums[1:]))
    passed = decreasing and sums[-1] < delta
    return ConvergenceReport(
        total=float(cum[-1]), windows=tuple(windows), delta=delta, passed=passed
    )
