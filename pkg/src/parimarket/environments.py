"""Outcome-generating environments.

Every environment exposes the conditional mean of the next outcome (the ideal
forecast), a positivity floor on that mean, and the exact one-step outcome
distribution for certificate checks. Single-step environments advance via
``step``; the staged-revelation environment implements the sub-step interface
directly.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import SimplexPoint, make_simplex, unit_vertex

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class OutcomeDistribution:
    """Exact finite distribution of the next outcome."""

    atoms: tuple[tuple[float, SimplexPoint], ...]

    def __post_init__(self) -> None:
        if not self.atoms:
            raise ValueError("distribution needs at least one atom")
        total = math.fsum(p for p, _ in self.atoms)
        if abs(total - 1.0) > _PROB_TOL:
            raise ValueError(f"atom probabilities sum to {total!r}")
        dim = self.atoms[0][1].dim
        for p, x in self.atoms:
            if p < 0.0:
                raise ValueError(f"negative atom probability {p!r}")
            if x.dim != dim:
                raise ValueError("atom dimensions differ")

    def expectation(self) -> SimplexPoint:
        dim = self.atoms[0][1].dim
        mean = [math.fsum(p * x[n] for p, x in self.atoms) for n in range(dim)]
        return make_simplex(mean)


class Environment(ABC):
    """Single-step environment: one outcome per round."""

    @property
    @abstractmethod
    def n_outcomes(self) -> int: ...

    @property
    @abstractmethod
    def epsilon(self) -> float:
        """Positivity floor: every component of every reachable conditional
        mean is at least this."""

    @abstractmethod
    def oracle(self) -> SimplexPoint:
        """Conditional mean of the next outcome given the current state."""

    @abstractmethod
    def step(self) -> SimplexPoint:
        """Sample the next outcome and advance the state."""

    @abstractmethod
    def outcome_distribution(self) -> OutcomeDistribution:
        """Exact distribution of the next outcome given the current state."""

    def observable_state(self):
        """State information available to the agents, if any."""
        return None


class IIDCategorical(Environment):
    """Independent draws of a vertex outcome with fixed probabilities."""

    def __init__(self, probabilities: Sequence[float], rng: np.random.Generator):
        probs = make_simplex(probabilities)
        if probs.min_component() <= 0.0:
            raise ValueError("every outcome probability must be positive")
        self._probs = probs
        self._rng = rng
        self._vertices = tuple(unit_vertex(probs.dim, n) for n in range(probs.dim))

    @property
    def n_outcomes(self) -> int:
        return self._probs.dim

    @property
    def epsilon(self) -> float:
        return self._probs.min_component()

    def oracle(self) -> SimplexPoint:
        return self._probs

    def step(self) -> SimplexPoint:
        n = int(self._rng.choice(self._probs.dim, p=self._probs.as_array()))
        return self._vertices[n]

    def outcome_distribution(self) -> OutcomeDistribution:
        return OutcomeDistribution(
            tuple((self._probs[n], self._vertices[n]) for n in range(self._probs.dim))
        )


def _closed_communicating_classes(transition: np.ndarray) -> list[set[int]]:
    """Closed communicating classes of a stochastic matrix, via the boolean
    reachability closure."""
    s = transition.shape[0]
    reach = np.eye(s, dtype=bool) | (transition > 0.0)
    for _ in range(s):
        reach = reach | (reach @ reach)
    mutual = reach & reach.T
    seen: set[int] = set()
    classes: list[set[int]] = []
    for i in range(s):
        if i in seen:
            continue
        cls = {j for j in range(s) if mutual[i, j]}
        seen |= cls
        closed = all(reach[i, j] <= mutual[i, j] for j in range(s))
        if closed:
            classes.append(cls)
    return classes


@dataclass(frozen=True)
class MarkovSpec:
    """Validated transition structure of a finite-state chain.

    Requires a stochastic matrix whose recurrent states form a single class,
    so the stationary distribution is unique.
    """

    transition: tuple[tuple[float, ...], ...]
    initial: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        p = np.asarray(self.transition, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("transition matrix must be square")
        if p.shape[0] < 1:
            raise ValueError("need at least one state")
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite transition probability")
        if np.any(p < 0.0):
            raise ValueError("negative transition probability")
        rows = p.sum(axis=1)
        bad = np.nonzero(np.abs(rows - 1.0) > _PROB_TOL)[0]
        if bad.size:
            raise ValueError(f"transition row {bad[0] + 1} sums to {rows[bad[0]]!r}")
        object.__setattr__(
            self, "transition", tuple(tuple(float(x) for x in row) for row in p)
        )
        classes = _closed_communicating_classes(p)
        if len(classes) != 1:
            raise ValueError(
                f"chain has {len(classes)} closed communicating classes, expected exactly one"
            )
        if self.initial is not None:
            init = make_simplex(self.initial)
            if init.dim != p.shape[0]:
                raise ValueError("initial distribution dimension mismatch")
            object.__setattr__(self, "initial", init.weights)

    @property
    def n_states(self) -> int:
        return len(self.transition)

    def matrix(self) -> np.ndarray:
        return np.asarray(self.transition, dtype=float)

    def stationary_distribution(self) -> SimplexPoint:
        """The unique stationary distribution, from the balance equations."""
        p = self.matrix()
        s = p.shape[0]
        a = np.vstack([p.T - np.eye(s), np.ones((1, s))])
        b = np.concatenate([np.zeros(s), [1.0]])
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        pi = np.clip(pi, 0.0, None)
        return make_simplex((pi / pi.sum()).tolist())

    def start_distribution(self) -> SimplexPoint:
        if self.initial is not None:
            return SimplexPoint(self.initial)
        return self.stationary_distribution()


class MarkovEmissionEnvironment(Environment):
    """Finite-state chain emitting a fixed outcome point per state.

    Construction checks that every reachable conditional mean stays strictly
    positive and that from each state the emissions of its possible successors
    span the full outcome space, so the state is identifiable from forecasts.
    """

    def __init__(
        self,
        spec: MarkovSpec,
        emissions: Sequence[SimplexPoint],
        rng: np.random.Generator,
        initial_state: int | None = None,
    ):
        if len(emissions) != spec.n_states:
            raise ValueError("one emission point per state required")
        dim = emissions[0].dim
        for e in emissions:
            if e.dim != dim:
                raise ValueError("emission dimensions differ")
        self._spec = spec
        self._emissions = tuple(emissions)
        self._rng = rng
        p = spec.matrix()
        e = np.asarray([em.weights for em in emissions], dtype=float)
        oracle_matrix = p @ e
        self._oracles = tuple(make_simplex(row.tolist()) for row in oracle_matrix)
        self._epsilon = float(oracle_matrix.min())
        if self._epsilon <= 0.0:
            raise ValueError("some conditional outcome mean has a zero component")
        for s in range(spec.n_states):
            successors = np.nonzero(p[s] > 0.0)[0]
            if np.linalg.matrix_rank(e[successors]) < dim:
                raise ValueError(
                    f"emissions of the successors of state {s + 1} do not span "
                    f"the outcome space"
                )
        if initial_state is not None:
            if not 0 <= initial_state < spec.n_states:
                raise ValueError(f"initial state {initial_state} out of range")
            self._state = int(initial_state)
        else:
            start = spec.start_distribution()
            self._state = int(rng.choice(spec.n_states, p=start.as_array()))

    @property
    def n_outcomes(self) -> int:
        return self._emissions[0].dim

    @property
    def epsilon(self) -> float:
        return self._epsilon

    @property
    def state(self) -> int:
        return self._state

    def set_state(self, state: int) -> None:
        if not 0 <= state < self._spec.n_states:
            raise ValueError(f"state {state} out of range")
        self._state = int(state)

    def oracle(self) -> SimplexPoint:
        return self._oracles[self._state]

    def step(self) -> SimplexPoint:
        row = np.asarray(self._spec.transition[self._state], dtype=float)
        self._state = int(self._rng.choice(self._spec.n_states, p=row))
        return self._emissions[self._state]

    def outcome_distribution(self) -> OutcomeDistribution:
        row = self._spec.transition[self._state]
        atoms = tuple(
            (row[s], self._emissions[s]) for s in range(self._spec.n_states) if row[s] > 0.0
        )
        return OutcomeDistribution(atoms)

    def observable_state(self) -> int:
        return self._state


def encode_bounded_mean(value: float, lower: float, upper: float) -> SimplexPoint:
    """Two-component encoding of a bounded scalar: first component is the
    position of the value within its range."""
    if upper <= lower:
        raise ValueError("upper bound must exceed lower bound")
    u = (value - lower) / (upper - lower)
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"value {value!r} outside [{lower}, {upper}]")
    return make_simplex([u, 1.0 - u])


def encode_moments(value: float, lower: float, upper: float, n_moments: int) -> SimplexPoint:
    """Encoding that carries the first ``n_moments`` powers of the rescaled
    value, each damped by ``n_moments`` so the components stay in the simplex;
    the remainder goes to a slack component."""
    if n_moments < 1:
        raise ValueError("need at least one moment")
    if upper <= lower:
        raise ValueError("upper bound must exceed lower bound")
    u = (value - lower) / (upper - lower)
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"value {value!r} outside [{lower}, {upper}]")
    comps = [u**n / n_moments for n in range(1, n_moments + 1)]
    comps.append(1.0 - math.fsum(comps))
    return make_simplex(comps)


class BoundedVariableEnvironment(Environment):
    """Independent draws of a bounded scalar, emitted through a simplex
    encoding so the market's forecast can be decoded back into estimates of
    the scalar's moments.

    Only finitely supported scalars are accepted: the exact outcome
    distribution must stay enumerable for certificate checks.
    """

    def __init__(
        self,
        values: Sequence[float],
        probabilities: Sequence[float],
        lower: float,
        upper: float,
        encoding: str,
        rng: np.random.Generator,
        n_moments: int = 2,
    ):
        if len(values) != len(probabilities):
            raise ValueError("one probability per value required")
        if not values:
            raise ValueError("need at least one support value")
        probs = make_simplex(probabilities)
        if encoding == "mean":
            encoded = [encode_bounded_mean(v, lower, upper) for v in values]
        elif encoding == "moments":
            encoded = [encode_moments(v, lower, upper, n_moments) for v in values]
        else:
            raise ValueError(f"unknown encoding {encoding!r}")
        self._values = tuple(float(v) for v in values)
        self._probs = probs
        self._encoded = tuple(encoded)
        self._rng = rng
        self.encoding = encoding
        self.lower = float(lower)
        self.upper = float(upper)
        self.n_moments = int(n_moments) if encoding == "moments" else 1
        self._distribution = OutcomeDistribution(
            tuple((probs[i], encoded[i]) for i in range(len(values)))
        )
        self._oracle = self._distribution.expectation()
        if self._oracle.min_component() <= 0.0:
            raise ValueError("outcome mean has a zero component; encoding is degenerate")

    @property
    def n_outcomes(self) -> int:
        return self._encoded[0].dim

    @property
    def epsilon(self) -> float:
        return self._oracle.min_component()

    def oracle(self) -> SimplexPoint:
        return self._oracle

    def step(self) -> SimplexPoint:
        i = int(self._rng.choice(len(self._values), p=self._probs.as_array()))
        return self._encoded[i]

    def outcome_distribution(self) -> OutcomeDistribution:
        return self._distribution


class ProgressiveRevelationEnvironment:
    """Binary-outcome environment whose information arrives during the round.

    Each round flips a fair hidden switch and a row of biased coins. With
    probability ``1 - blackout`` the first outcome happens exactly when every
    coin lands heads; with probability ``blackout`` it follows the hidden
    switch instead, which keeps both conditional means bounded away from zero.
    Coins are revealed one per sub-step, moving the conditional mean as the
    round progresses.
    """

    def __init__(
        self,
        coins: int,
        head_probability: float,
        blackout: float,
        rng: np.random.Generator,
    ):
        if coins < 1:
            raise ValueError("need at least one coin")
        if not 0.0 <= head_probability <= 1.0:
            raise ValueError(f"head probability {head_probability!r} outside [0, 1]")
        if not 0.0 < blackout < 1.0:
            raise ValueError(f"blackout probability {blackout!r} outside (0, 1)")
        self._coins = int(coins)
        self._q = float(head_probability)
        self._blackout = float(blackout)
        self._rng = rng
        self._round_open = False

    @property
    def n_outcomes(self) -> int:
        return 2

    @property
    def epsilon(self) -> float:
        return self._blackout / 2.0

    def observable_state(self):
        return None

    def begin_round(self) -> None:
        u = self._rng.random(self._coins + 2)
        self._dark = bool(u[0] < self._blackout)
        self._switch = bool(u[1] < 0.5)
        self._heads = tuple(bool(x < self._q) for x in u[2:])
        self._revealed = 0
        self._round_open = True

    def substep_oracle(self) -> SimplexPoint:
        if not self._round_open:
            raise RuntimeError("no round in progress")
        shown = self._heads[: self._revealed]
        if all(shown):
            remaining = self._coins - self._revealed
            p1 = self._blackout / 2.0 + (1.0 - self._blackout) * self._q**remaining
        else:
            p1 = self._blackout / 2.0
        return make_simplex([p1, 1.0 - p1])

    def reveal_signal(self) -> bool | None:
        if not self._round_open:
            raise RuntimeError("no round in progress")
        if self._revealed >= self._coins:
            return None
        sig = self._heads[self._revealed]
        self._revealed += 1
        return sig

    def end_round(self) -> SimplexPoint:
        if not self._round_open:
            raise RuntimeError("no round in progress")
        if self._dark:
            first = self._switch
        else:
            first = all(self._heads)
        self._round_open = False
        return unit_vertex(2, 0 if first else 1)


def build_environment(config: dict, rng: np.random.Generator):
    """Construct an environment from its configuration mapping."""
    kind = config.get("kind")
    if kind == "iid_categorical":
        return IIDCategorical(config["probabilities"], rng)
    if kind == "markov":
        spec = MarkovSpec(
            transition=tuple(tuple(row) for row in config["transition"]),
            initial=tuple(config["initial"]) if config.get("initial") is not None else None,
        )
        emissions = [make_simplex(e) for e in config["emissions"]]
        return MarkovEmissionEnvironment(
            spec, emissions, rng, initial_state=config.get("initial_state")
        )
    if kind == "bounded_variable":
        return BoundedVariableEnvironment(
            values=config["values"],
            probabilities=config["probabilities"],
            lower=config["lower"],
            upper=config["upper"],
            encoding=config.get("encoding", "mean"),
            rng=rng,
            n_moments=config.get("n_moments", 2),
        )
    if kind == "progressive_revelation":
        return ProgressiveRevelationEnvironment(
            coins=config["coins"],
            head_probability=config["head_probability"],
            blackout=config["blackout"],
            rng=rng,
        )
    raise ValueError(f"unknown environment kind {kind!r}")
