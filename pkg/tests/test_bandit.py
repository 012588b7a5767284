import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exp3cil.bandit import (
    PolicyState,
    forced_policy,
    init_policy,
    policy_distribution,
    sample_action,
    update_weight,
)
from exp3cil.errors import (
    ImportanceWeightError,
    InvalidActionSpaceError,
    InvalidParameterError,
    RewardRangeError,
)

log_weight_vectors = st.lists(st.floats(-50, 50), min_size=2, max_size=60).map(np.array)


def test_init_uniform():
    p = policy_distribution(init_policy(4, 0.1))
    np.testing.assert_allclose(p, [0.25] * 4)


def test_init_fifty_actions():
    pol = init_policy(50, 0.1)
    assert np.all(pol.log_weights == 0)
    np.testing.assert_allclose(policy_distribution(pol), 0.02)


@pytest.mark.parametrize("n, xi, err", [(1, 0.1, InvalidActionSpaceError), (0, 0.1, InvalidActionSpaceError),
                                        (3, 0.0, InvalidParameterError), (3, -1.0, InvalidParameterError)])
def test_init_rejects(n, xi, err):
    with pytest.raises(err):
        init_policy(n, xi)


def test_distribution_examples():
    np.testing.assert_allclose(policy_distribution(PolicyState(np.zeros(3))), [1 / 3] * 3)
    np.testing.assert_allclose(policy_distribution(PolicyState(np.log([1.0, 3.0]))), [0.25, 0.75])


def test_distribution_no_overflow():
    p = policy_distribution(PolicyState(np.array([1000.0, 1000.0, 0.0])))
    assert np.all(np.isfinite(p))
    # exact arithmetic on the shifted values (0, 0, -1000)
    expected = np.array([1.0, 1.0, math.exp(-1000.0)]) / 2.0
    np.testing.assert_allclose(p, expected, atol=1e-15)


def test_sample_frequencies_uniform():
    pol = init_policy(4)
    rng = np.random.default_rng(0)
    counts = np.bincount([sample_action(pol, rng) for _ in range(100_000)], minlength=4)
    np.testing.assert_allclose(counts / 100_000, 0.25, atol=0.01)


def test_sample_degenerate_policy():
    pol = PolicyState(np.array([0.0, -800.0, -800.0]))
    rng = np.random.default_rng(3)
    assert {sample_action(pol, rng) for _ in range(1000)} == {0}


def test_sample_deterministic():
    pol = PolicyState(np.log([0.1, 0.2, 0.3, 0.4]))
    r1, r2 = np.random.default_rng(7), np.random.default_rng(7)
    s1 = [sample_action(pol, r1) for _ in range(200)]
    s2 = [sample_action(pol, r2) for _ in range(200)]
    assert s1 == s2


def test_forced_policy_always_picks_index():
    pol = forced_policy(5, 3)
    np.testing.assert_array_equal(policy_distribution(pol), [0, 0, 0, 1, 0])
    rng = np.random.default_rng(0)
    assert {sample_action(pol, rng) for _ in range(500)} == {3}
    pol = update_weight(pol, 3, 0.7)
    assert sample_action(pol, rng) == 3
    with pytest.raises(ImportanceWeightError):
        update_weight(pol, 0, 0.5)


def test_update_zero_reward_is_noop():
    pol = PolicyState(np.array([0.3, -1.2, 2.0]), xi=0.4)
    new = update_weight(pol, 1, 0.0)
    assert np.array_equal(policy_distribution(new), policy_distribution(pol))
    assert new.update_count == pol.update_count + 1


def test_update_two_arm_example():
    new = update_weight(init_policy(2, 0.1), 0, 1.0)
    np.testing.assert_allclose(new.log_weights, [0.2, 0.0])
    # e^0.2 / (e^0.2 + 1), evaluated at 30 digits
    np.testing.assert_allclose(policy_distribution(new), [0.549833997312478, 0.450166002687522], rtol=1e-12)


def test_update_errors():
    pol = init_policy(3)
    for bad in (-0.01, 1.01, float("nan")):
        with pytest.raises(RewardRangeError):
            update_weight(pol, 0, bad)
    with pytest.raises(IndexError):
        update_weight(pol, 3, 0.5)
    with pytest.raises(ImportanceWeightError):
        update_weight(PolicyState(np.array([0.0, -1e6])), 1, 0.5)


def _simulate(means, xi, steps, seed, noise=0.1):
    rng = np.random.default_rng(seed)
    pol = init_policy(len(means), xi)
    for _ in range(steps):
        a = sample_action(pol, rng)
        r = float(np.clip(means[a] + noise * rng.normal(), 0.0, 1.0))
        pol = update_weight(pol, a, r)
    return policy_distribution(pol)


def test_static_two_arm_concentrates():
    p = _simulate([0.9, 0.5], xi=0.05, steps=500, seed=0, noise=0.0)
    assert p[0] >= 0.8


def test_five_arm_convergence_property():
    hits = sum(_simulate([0.7, 0.5, 0.5, 0.5, 0.5], 0.05, 1000, seed)[0] > 0.7 for seed in range(10))
    assert hits >= 9


@given(log_weight_vectors, st.data())
@settings(max_examples=200, deadline=None)
def test_update_sequence_keeps_valid_distribution(lw, data):
    pol = PolicyState(lw, xi=0.1)
    for _ in range(data.draw(st.integers(0, 20))):
        i = data.draw(st.integers(0, lw.size - 1))
        if policy_distribution(pol)[i] < 1e-200:
            continue
        pol = update_weight(pol, i, data.draw(st.floats(0, 1)))
    p = policy_distribution(pol)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) < 1e-9
    assert np.all(np.isfinite(pol.log_weights))


@given(log_weight_vectors, st.floats(1e-3, 1.0), st.data())
@settings(max_examples=200, deadline=None)
def test_monotone_reinforcement(lw, r, data):
    pol = PolicyState(lw, xi=0.1)
    i = data.draw(st.integers(0, lw.size - 1))
    before = policy_distribution(pol)
    if before[i] > 1 - 1e-6 or before[i] < 1e-6:
        return  # probabilities saturated at float resolution
    after = policy_distribution(update_weight(pol, i, r))
    others = np.arange(lw.size) != i
    assert after[i] > before[i]
    assert np.all(after[others] <= before[others])
    assert np.all(after[others][before[others] > 1e-300] < before[others][before[others] > 1e-300])


@given(log_weight_vectors, st.floats(-100, 100))
@settings(max_examples=200, deadline=None)
def test_scale_coherence(lw, c):
    np.testing.assert_allclose(
        policy_distribution(PolicyState(lw)), policy_distribution(PolicyState(lw + c)), rtol=1e-9, atol=1e-15
    )


def test_mixing_coefficient():
    pol = PolicyState(np.array([0.0, -np.inf, -np.inf, -np.inf]), mix=0.2)
    np.testing.assert_allclose(policy_distribution(pol), [0.85, 0.05, 0.05, 0.05])


def test_json_round_trip():
    pol = update_weight(init_policy(4, 0.3), 2, 0.6)
    assert PolicyState.from_json(pol.to_json()) == pol
    forced = forced_policy(3, 1)
    back = PolicyState.from_json(forced.to_json())
    assert back == forced and np.isneginf(back.log_weights[0])


def test_invalid_log_weights():
    with pytest.raises(InvalidParameterError):
        PolicyState(np.array([0.0, np.nan]))
    with pytest.raises(InvalidParameterError):
        PolicyState(np.array([0.0, np.inf]))
