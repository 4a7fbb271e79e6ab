import math

import numpy as np
import pytest

from parimarket.core import make_simplex, substream, unit_vertex
from parimarket.environments import (
    BoundedVariableEnvironment,
    IIDCategorical,
    MarkovEmissionEnvironment,
    MarkovSpec,
    OutcomeDistribution,
    ProgressiveRevelationEnvironment,
    build_environment,
    encode_bounded_mean,
    encode_moments,
)

VERTICES_2 = [make_simplex([1.0, 0.0]), make_simplex([0.0, 1.0])]


def test_outcome_distribution_expectation():
    dist = OutcomeDistribution(((0.6, VERTICES_2[0]), (0.4, VERTICES_2[1])))
    assert dist.expectation().weights == pytest.approx((0.6, 0.4), abs=1e-15)
    with pytest.raises(ValueError):
        OutcomeDistribution(((0.6, VERTICES_2[0]), (0.3, VERTICES_2[1])))
    with pytest.raises(ValueError):
        OutcomeDistribution(())


def test_iid_categorical_basics():
    env = IIDCategorical([0.6, 0.3, 0.1], np.random.default_rng(0))
    assert env.n_outcomes == 3
    assert env.epsilon == pytest.approx(0.1)
    assert env.oracle().weights == (0.6, 0.3, 0.1)
    assert env.observable_state() is None
    assert env.outcome_distribution().expectation().weights == pytest.approx(
        (0.6, 0.3, 0.1), abs=1e-15
    )
    x = env.step()
    assert sorted(x.weights) == [0.0, 0.0, 1.0]
    with pytest.raises(ValueError):
        IIDCategorical([0.5, 0.5, 0.0], np.random.default_rng(0))


def test_iid_categorical_frequencies_match_probabilities():
    env = IIDCategorical([0.7, 0.3], np.random.default_rng(99))
    hits = sum(env.step()[0] for _ in range(20000))
    # 4 sigma for a fair binomial at p=0.7
    assert abs(hits / 20000 - 0.7) < 4 * math.sqrt(0.21 / 20000)


@pytest.mark.parametrize(
    "transition, message",
    [
        ([[0.5, 0.5]], "square"),
        ([[0.9, 0.2], [0.2, 0.8]], "sums to"),
        ([[1.1, -0.1], [0.2, 0.8]], "negative"),
        ([[1.0, 0.0], [0.0, 1.0]], "closed communicating classes"),
    ],
)
def test_markov_spec_rejects_malformed_chains(transition, message):
    with pytest.raises(ValueError, match=message):
        MarkovSpec(transition=tuple(tuple(r) for r in transition))


def test_markov_spec_accepts_transient_states():
    # state 0 drains into the single closed class {1}
    spec = MarkovSpec(transition=((0.5, 0.5), (0.0, 1.0)))
    assert spec.n_states == 2


def test_markov_stationary_distribution_matches_long_run_powers():
    spec = MarkovSpec(transition=((0.9, 0.1), (0.2, 0.8)))
    pi = spec.stationary_distribution()
    assert pi.weights == pytest.approx((2 / 3, 1 / 3), abs=1e-12)
    # independent check: long matrix powers converge row-wise to pi
    power = np.linalg.matrix_power(spec.matrix(), 200)
    assert np.allclose(power[0], pi.as_array(), atol=1e-12)
    assert np.allclose(power[1], pi.as_array(), atol=1e-12)


def test_markov_environment_oracle_and_floor():
    spec = MarkovSpec(transition=((0.9, 0.1), (0.2, 0.8)))
    env = MarkovEmissionEnvironment(spec, VERTICES_2, np.random.default_rng(1), initial_state=0)
    assert env.oracle().weights == pytest.approx((0.9, 0.1), abs=1e-15)
    env.set_state(1)
    assert env.oracle().weights == pytest.approx((0.2, 0.8), abs=1e-15)
    assert env.epsilon == pytest.approx(0.1, abs=1e-15)
    dist = env.outcome_distribution()
    assert dist.atoms[0][0] == 0.2
    assert dist.atoms[1][0] == 0.8
    assert env.observable_state() == 1
    with pytest.raises(ValueError):
        env.set_state(2)
    with pytest.raises(ValueError):
        MarkovEmissionEnvironment(spec, VERTICES_2, np.random.default_rng(1), initial_state=5)


def test_markov_environment_rejects_degenerate_structure():
    spec = MarkovSpec(transition=((0.9, 0.1), (0.2, 0.8)))
    # identical emissions: conditional means stay positive but successors
    # cannot be told apart
    same = [make_simplex([0.5, 0.5]), make_simplex([0.5, 0.5])]
    with pytest.raises(ValueError, match="span"):
        MarkovEmissionEnvironment(spec, same, np.random.default_rng(0))
    # an absorbing state whose only successor emits a single interior point:
    # the conditional mean stays positive but spans nothing
    absorbing = MarkovSpec(
        transition=((0.5, 0.25, 0.25), (0.25, 0.5, 0.25), (0.0, 0.0, 1.0))
    )
    emissions = [make_simplex([1.0, 0.0]), make_simplex([0.0, 1.0]), make_simplex([0.5, 0.5])]
    with pytest.raises(ValueError, match="state 3"):
        MarkovEmissionEnvironment(absorbing, emissions, np.random.default_rng(0))
    # an absorbing-vertex oracle has a zero component
    one_sided = [make_simplex([1.0, 0.0]), make_simplex([1.0, 0.0])]
    with pytest.raises(ValueError, match="zero component"):
        MarkovEmissionEnvironment(spec, one_sided, np.random.default_rng(0))


def test_markov_environment_occupancy_matches_stationary_law():
    spec = MarkovSpec(transition=((0.9, 0.1), (0.2, 0.8)))
    env = MarkovEmissionEnvironment(spec, VERTICES_2, np.random.default_rng(12), initial_state=0)
    steps = 10_000
    visits = 0
    for _ in range(steps):
        env.step()
        visits += env.state == 0
    # the chain mixes slowly (second eigenvalue 0.7), so the frequency
    # variance is inflated by (1+r)/(1-r) relative to iid sampling
    sigma = math.sqrt((2 / 9) * (1.7 / 0.3) / steps)
    assert abs(visits / steps - 2 / 3) < 4 * sigma


def test_bounded_mean_encoding_places_value_in_range():
    assert encode_bounded_mean(3.5, 2.0, 5.0).weights == pytest.approx((0.5, 0.5), abs=1e-15)
    assert encode_bounded_mean(2.0, 2.0, 5.0).weights == (0.0, 1.0)
    with pytest.raises(ValueError):
        encode_bounded_mean(5.5, 2.0, 5.0)
    with pytest.raises(ValueError):
        encode_bounded_mean(1.0, 2.0, 2.0)


def test_moment_encoding_carries_damped_powers():
    p = encode_moments(0.2, 0.0, 1.0, 2)
    assert p.weights == pytest.approx((0.1, 0.02, 0.88), abs=1e-15)
    with pytest.raises(ValueError):
        encode_moments(0.5, 0.0, 1.0, 0)


def test_bounded_environment_mean_mode():
    env = BoundedVariableEnvironment(
        values=[2.0, 5.0],
        probabilities=[0.25, 0.75],
        lower=2.0,
        upper=5.0,
        encoding="mean",
        rng=np.random.default_rng(3),
    )
    assert env.n_outcomes == 2
    # E[(xi - 2) / 3] = 0.75
    assert env.oracle().weights == pytest.approx((0.75, 0.25), abs=1e-15)
    assert env.epsilon == pytest.approx(0.25, abs=1e-15)
    x = env.step()
    assert x.weights in ((0.0, 1.0), (1.0, 0.0))


def test_bounded_environment_moments_mode_oracle():
    env = BoundedVariableEnvironment(
        values=[0.2, 0.8],
        probabilities=[0.5, 0.5],
        lower=0.0,
        upper=1.0,
        encoding="moments",
        rng=np.random.default_rng(4),
        n_moments=2,
    )
    assert env.n_outcomes == 3
    # E xi = 0.5 and E xi^2 = 0.34, each damped by 2
    assert env.oracle().weights == pytest.approx((0.25, 0.17, 0.58), abs=1e-12)
    dist = env.outcome_distribution()
    assert len(dist.atoms) == 2
    assert dist.atoms[0][1].weights == pytest.approx((0.1, 0.02, 0.88), abs=1e-15)


def test_bounded_environment_rejects_degenerate_support():
    with pytest.raises(ValueError, match="degenerate"):
        BoundedVariableEnvironment(
            values=[0.0],
            probabilities=[1.0],
            lower=0.0,
            upper=1.0,
            encoding="moments",
            rng=np.random.default_rng(0),
        )
    with pytest.raises(ValueError):
        BoundedVariableEnvironment(
            values=[0.5, 1.5],
            probabilities=[0.5, 0.5],
            lower=0.0,
            upper=1.0,
            encoding="mean",
            rng=np.random.default_rng(0),
        )
    with pytest.raises(ValueError, match="encoding"):
        BoundedVariableEnvironment(
            values=[0.5],
            probabilities=[1.0],
            lower=0.0,
            upper=1.0,
            encoding="median",
            rng=np.random.default_rng(0),
        )


def test_progressive_revelation_round_start_mean():
    env = ProgressiveRevelationEnvironment(
        coins=2, head_probability=0.9, blackout=0.01, rng=np.random.default_rng(0)
    )
    env.begin_round()
    mu = env.substep_oracle()
    assert mu[0] == pytest.approx(0.01 * 0.5 + 0.99 * 0.81, abs=1e-15)
    assert env.epsilon == pytest.approx(0.005, abs=1e-18)
    env.end_round()


def test_progressive_revelation_mean_reacts_to_signals():
    env = ProgressiveRevelationEnvironment(
        coins=2, head_probability=0.9, blackout=0.01, rng=np.random.default_rng(5)
    )
    half = 0.005
    seen_tail = seen_head = False
    for _ in range(200):
        env.begin_round()
        first = env.reveal_signal()
        mu = env.substep_oracle()
        if first:
            assert mu[0] == pytest.approx(half + 0.99 * 0.9, abs=1e-15)
            seen_head = True
        else:
            assert mu[0] == pytest.approx(half, abs=1e-18)
            seen_tail = True
        env.end_round()
    assert seen_head and seen_tail


def test_progressive_revelation_conditional_means_are_calibrated():
    env = ProgressiveRevelationEnvironment(
        coins=2, head_probability=0.7, blackout=0.1, rng=np.random.default_rng(21)
    )
    rounds = 30_000
    by_claim: dict = {}
    for _ in range(rounds):
        env.begin_round()
        env.reveal_signal()
        claim = round(env.substep_oracle()[0], 12)
        won = env.end_round()[0] == 1.0
        hits, total = by_claim.get(claim, (0, 0))
        by_claim[claim] = (hits + won, total + 1)
    assert len(by_claim) == 2
    for claim, (hits, total) in by_claim.items():
        sigma = math.sqrt(claim * (1 - claim) / total)
        assert abs(hits / total - claim) < 4.5 * sigma


def test_progressive_revelation_consumes_fixed_randomness_per_round():
    env = ProgressiveRevelationEnvironment(
        coins=3, head_probability=0.8, blackout=0.05, rng=substream(7, 0, "environment")
    )
    mirror = substream(7, 0, "environment")
    for _ in range(50):
        u = mirror.random(5)
        env.begin_round()
        dark = u[0] < 0.05
        switch = u[1] < 0.5
        heads = [x < 0.8 for x in u[2:]]
        expected_first = switch if dark else all(heads)
        assert [env.reveal_signal() for _ in range(3)] == heads
        assert env.reveal_signal() is None
        x = env.end_round()
        assert (x[0] == 1.0) == expected_first


def test_progressive_revelation_guards_round_protocol():
    env = ProgressiveRevelationEnvironment(
        coins=1, head_probability=0.5, blackout=0.1, rng=np.random.default_rng(0)
    )
    with pytest.raises(RuntimeError):
        env.substep_oracle()
    with pytest.raises(RuntimeError):
        env.end_round()
    with pytest.raises(ValueError):
        ProgressiveRevelationEnvironment(
            coins=0, head_probability=0.5, blackout=0.1, rng=np.random.default_rng(0)
        )
    with pytest.raises(ValueError):
        ProgressiveRevelationEnvironment(
            coins=1, head_probability=0.5, blackout=0.0, rng=np.random.default_rng(0)
        )


def test_build_environment_dispatch():
    rng = np.random.default_rng(0)
    env = build_environment({"kind": "iid_categorical", "probabilities": [0.5, 0.5]}, rng)
    assert isinstance(env, IIDCategorical)
    env = build_environment(
        {
            "kind": "markov",
            "transition": [[0.9, 0.1], [0.2, 0.8]],
            "emissions": [[1.0, 0.0], [0.0, 1.0]],
        },
        rng,
    )
    assert isinstance(env, MarkovEmissionEnvironment)
    env = build_environment(
        {
            "kind": "bounded_variable",
            "values": [0.2, 0.8],
            "probabilities": [0.5, 0.5],
            "lower": 0.0,
            "upper": 1.0,
            "encoding": "moments",
            "n_moments": 2,
        },
        rng,
    )
    assert isinstance(env, BoundedVariableEnvironment)
    env = build_environment(
        {"kind": "progressive_revelation", "coins": 2, "head_probability": 0.9, "blackout": 0.01},
        rng,
    )
    assert isinstance(env, ProgressiveRevelationEnvironment)
    with pytest.raises(ValueError, match="unknown environment kind"):
        build_environment({"kind": "weather"}, rng)


def test_markov_initial_state_sampled_from_declared_distribution():
    spec = MarkovSpec(transition=((0.9, 0.1), (0.2, 0.8)), initial=(1.0, 0.0))
    env = MarkovEmissionEnvironment(spec, VERTICES_2, np.random.default_rng(6))
    assert env.state == 0
