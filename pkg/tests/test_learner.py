import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cyclens import learner
from cyclens.errors import DimensionMismatch, NonFiniteGradient, NonPositiveProbability
from cyclens.learner import (Architecture, Batch, Categorical, DiagGaussian, PolicyParams, init_params,
                             policy_distribution, policy_loss, total_error, train_step, value_loss)

from helpers import finite_difference_gradient, max_relative_error, random_instance


def test_zero_policy_head_is_uniform():
    arch = Architecture(25, 4)
    p = init_params(arch, np.random.default_rng(0))
    p["Wp"][:] = 0.0
    d = policy_distribution(p, np.eye(25)[3])
    assert isinstance(d, Categorical)
    assert np.allclose(d.probs, 0.25, atol=0, rtol=0)


def test_continuous_head_log_std_zero():
    arch = Architecture(4, 2, continuous=True)
    p = init_params(arch, np.random.default_rng(0))
    d = policy_distribution(p, np.zeros(4))
    assert isinstance(d, DiagGaussian)
    assert np.array_equal(d.std, [1.0, 1.0])


def test_dimension_mismatch():
    p = init_params(Architecture(4, 2), np.random.default_rng(0))
    with pytest.raises(DimensionMismatch):
        policy_distribution(p, np.zeros(5))
    with pytest.raises(DimensionMismatch):
        PolicyParams(p.arch, np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 20))
def test_probabilities_normalise(seed, scale):
    rng = np.random.default_rng(seed)
    p = PolicyParams(Architecture(4, 5, hidden=8), rng.normal(0, scale, Architecture(4, 5, hidden=8).size))
    probs = policy_distribution(p, rng.normal(size=4)).probs
    assert abs(probs.sum() - 1) <= 1e-12
    assert np.all(probs > 0) or scale > 5   # extreme logits may underflow


@pytest.mark.parametrize("args, expected", [((1, 0.99, 0, 0), 1.0), ((0.5, 0.9, 2, 1), 1.3)])
def test_value_loss(args, expected):
    assert value_loss(*args) == pytest.approx(expected, abs=1e-15)


def test_value_loss_cancels():
    x = 3.7
    assert value_loss(0, 0.99, x, 0.99 * x) == 0.0


def test_policy_loss():
    assert policy_loss(1.0, 5) == 0.0
    assert policy_loss(math.exp(-1), 2) == pytest.approx(2.0, abs=1e-15)
    assert policy_loss(0.5, 0) == 0.0
    with pytest.raises(NonPositiveProbability):
        policy_loss(0.0, 1.0)


def test_total_error():
    assert total_error(0.5, 1.0, 0.5) == 1.0
    assert total_error(0.7, 0.0, 123.0) == 0.7
    assert total_error(0.0, 2.0, 0.25) == 0.5


@pytest.mark.parametrize("continuous", [False, True])
def test_zero_lr_leaves_params_bitwise(continuous):
    p, batch = random_instance(np.random.default_rng(1), continuous)
    new, losses = train_step(p, batch, 0.0)
    assert new.flat.tobytes() == p.flat.tobytes()
    assert len(losses) == len(batch)


@pytest.mark.parametrize("continuous", [False, True])
def test_train_step_deterministic(continuous):
    p, batch = random_instance(np.random.default_rng(2), continuous)
    a, la = train_step(p, batch, 0.1)
    b, lb = train_step(p, batch, 0.1)
    assert a == b and la == lb


@pytest.mark.parametrize("continuous", [False, True])
def test_logged_total_is_exact_composition(continuous):
    p, batch = random_instance(np.random.default_rng(3), continuous, n=20)
    _, losses = train_step(p, batch, 0.05, c_v=0.37)
    for lb in losses:
        assert lb.total == lb.pi_loss + lb.v_loss * lb.c_v
        assert lb.c_v == 0.37


def test_logged_losses_match_scalar_ops():
    p, batch = random_instance(np.random.default_rng(4), False, n=5)
    _, losses = train_step(p, batch, 0.0, c_v=0.5, gamma=0.9)
    for k, lb in enumerate(losses):
        v = learner.value(p, batch.states[k])[0]
        v_next = 0.0 if batch.dones[k] else learner.value(p, batch.next_states[k])[0]
        delta = value_loss(batch.rewards[k], 0.9, v_next, v)
        prob = policy_distribution(p, batch.states[k]).probs[batch.actions[k]]
        assert lb.v_loss == pytest.approx(delta, rel=1e-12, abs=1e-12)
        assert lb.pi_loss == pytest.approx(policy_loss(prob, delta), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("continuous", [False, True])
def test_gradient_matches_finite_differences(continuous):
    rng = np.random.default_rng(10)
    for _ in range(5):
        p, batch = random_instance(rng, continuous)
        fd, adv, targets = finite_difference_gradient(p, batch)
        _, g = learner.surrogate_grad(p, batch, adv, targets, 0.5, 0.01)
        assert max_relative_error(g, fd) < 1e-4


def test_descent_reduces_objective():
    p, batch = random_instance(np.random.default_rng(5), False, n=8)
    adv, targets = learner.td_quantities(p, batch, 0.99)
    before = learner.surrogate(p, batch, adv, targets, 0.5, 0.01)
    _, g = learner.surrogate_grad(p, batch, adv, targets, 0.5, 0.01)
    after = learner.surrogate(learner.apply_update(p, g, 1e-3), batch, adv, targets, 0.5, 0.01)
    assert after < before


def test_log_std_clamped():
    p, batch = random_instance(np.random.default_rng(6), True)
    p["log_std"][:] = [1.99, -4.99, 0.0]
    new, _ = train_step(p, batch, 50.0)
    assert np.all(new["log_std"] <= 2.0) and np.all(new["log_std"] >= -5.0)


def test_non_finite_gradient_reports_index():
    p, batch = random_instance(np.random.default_rng(7), False, n=4)
    batch.rewards[2] = np.inf
    with pytest.raises(NonFiniteGradient) as info:
        train_step(p, batch, 0.1)
    assert info.value.batch_index == 2


def test_batch_from_transitions():
    from cyclens.envs import make_env
    env = make_env("gridworld")
    env.reset(seed=0)
    trs = [env.step(a) for a in (1, 1, 2)]
    b = Batch.from_transitions(trs)
    assert b.actions.dtype == np.int64 and b.states.shape == (3, 25)
    new, losses = train_step(init_params(Architecture(25, 4), np.random.default_rng(0)), b, 0.1)
    assert len(losses) == 3
