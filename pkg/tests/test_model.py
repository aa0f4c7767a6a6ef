import numpy as np
import pytest

from particle_planning.errors import SpecError
from particle_planning.model import (
    AvgL1Reward,
    CustomReward,
    Environment,
    LinearPolicy,
    LipschitzPolicy,
    SumNormReward,
    SystemSpec,
    evaluate_reward,
    observe,
    policy_lipschitz_check,
    replay_observations,
    replay_states,
    reward_lipschitz_check,
    step_state,
    time_invariant_spec,
    unroll_noise,
    validate_spec,
)
from particle_planning.noise import DiagonalGaussian, point_mass


def test_valid_spec_has_no_violations(gaussian_scalar_spec):
    assert validate_spec(gaussian_scalar_spec) == []


def test_short_a_sequence_reported(gaussian_scalar_spec):
    spec = gaussian_scalar_spec
    broken = SystemSpec(spec.state_dim, spec.action_dim, spec.obs_dim, spec.horizon, spec.A_seq[:3], spec.B_seq,
                        spec.C_seq, spec.transition_noise_seq, spec.obs_noise_seq, spec.x0)
    assert "A_seq length: expected 5, got 3" in validate_spec(broken)


def test_wrong_b_shape_reported():
    noise = DiagonalGaussian([0.0, 0.0], [1.0, 1.0])
    spec = time_invariant_spec(np.eye(2), np.ones((3, 1)), np.eye(2), noise, noise, horizon=2)
    assert any(v.startswith("B_0 shape") for v in validate_spec(spec))


def test_noise_dimension_reported():
    spec = time_invariant_spec(np.eye(2), np.ones((2, 1)), np.eye(2), DiagonalGaussian([0.0], [1.0]),
                               DiagonalGaussian([0.0, 0.0], [1.0, 1.0]), horizon=2)
    assert any("transition_noise_seq[0] dimension" in v for v in validate_spec(spec))


def test_step_state_scalar():
    spec = time_invariant_spec(2.0, 1.0, 1.0, point_mass([0.0]), point_mass([0.0]), horizon=3)
    np.testing.assert_array_equal(step_state(spec, 0, [1.0], [0.5], [0.25]), [2.75])


def test_step_and_observe_index_bounds(gaussian_scalar_spec):
    with pytest.raises(SpecError):
        step_state(gaussian_scalar_spec, 5, [0.0], [0.0], [0.0])
    with pytest.raises(SpecError):
        observe(gaussian_scalar_spec, 0, [0.0], [0.0])
    with pytest.raises(SpecError):
        step_state(gaussian_scalar_spec, 0, [0.0, 1.0], [0.0], [0.0])


def test_unroll_two_steps():
    spec = time_invariant_spec(2.0, 0.0, 1.0, point_mass([0.0]), point_mass([0.0]), horizon=2)
    np.testing.assert_array_equal(unroll_noise(spec, np.zeros((2, 1)), np.ones((2, 1)), 2), [3.0])


def test_unroll_matches_replay():
    rng = np.random.Generator(np.random.Philox(9))
    A = rng.normal(size=(3, 3))
    noise = DiagonalGaussian(np.zeros(3), np.ones(3))
    spec = time_invariant_spec(A, rng.normal(size=(3, 2)), np.eye(3), noise, noise, horizon=4, x0=rng.normal(size=3))
    actions = rng.normal(size=(4, 2))
    noises = rng.normal(size=(4, 3))
    states = replay_states(spec, actions, noises)
    for t in range(5):
        np.testing.assert_allclose(unroll_noise(spec, actions, noises, t), states[t], rtol=1e-9, atol=1e-9)


def test_linear_policy():
    policy = LinearPolicy(np.array([[-1.0, 0.5]]))
    np.testing.assert_array_equal(policy(np.array([1.0, 2.0])), [0.0])
    assert policy.lipschitz == pytest.approx(np.linalg.norm([-1.0, 0.5]))
    assert policy_lipschitz_check(policy, 2) <= 1.0 + 1e-12


def test_linear_policy_rejects_small_declared_constant():
    with pytest.raises(SpecError):
        LinearPolicy(np.array([[2.0]]), lipschitz=1.0)


def test_lipschitz_policy_shape_checked():
    policy = LipschitzPolicy(lambda y: np.tanh(y), lipschitz=1.0, action_dim=1)
    np.testing.assert_allclose(policy(np.array([0.0])), [0.0])
    assert policy_lipschitz_check(policy, 1) <= 1.0
    with pytest.raises(SpecError):
        LipschitzPolicy(lambda y: np.zeros(2), lipschitz=1.0, action_dim=1)(np.array([0.0]))


def test_avg_l1_reward():
    reward = AvgL1Reward(state_dim=1, horizon=2)
    assert evaluate_reward(reward, [[1.0], [-3.0]], [[0.0], [0.0]]) == 2.0
    assert reward.lipschitz == 0.5


def test_sum_norm_reward():
    assert evaluate_reward(SumNormReward(), [[1.0], [0.0]], [[2.0], [0.0]]) == 3.0
    assert reward_lipschitz_check(SumNormReward(), 3, 2, 1) <= 1.0 + 1e-12


def test_reward_length_mismatch():
    with pytest.raises(SpecError):
        evaluate_reward(SumNormReward(), [[1.0], [0.0]], [[2.0]])


def test_custom_reward_requires_positive_constant():
    with pytest.raises(SpecError):
        CustomReward(lambda x, u: 0.0, lipschitz=0.0)


def test_environment_replays_exactly(gaussian_scalar_spec, key):
    env = Environment.from_key(gaussian_scalar_spec, key)
    for u in ([0.5], [-1.0], [0.0]):
        env.step(u)
    traj = env.trajectory()
    assert traj.steps == 3
    states = replay_states(gaussian_scalar_spec, traj.actions, traj.transition_noises)
    np.testing.assert_array_equal(states, traj.states)
    np.testing.assert_array_equal(
        replay_observations(gaussian_scalar_spec, traj.states, traj.observation_noises), traj.observations)


def test_environment_same_key_same_noise(gaussian_scalar_spec, key):
    a = Environment.from_key(gaussian_scalar_spec, key)
    b = Environment.from_key(gaussian_scalar_spec, key)
    np.testing.assert_array_equal(a.transition_noises, b.transition_noises)
    np.testing.assert_array_equal(a.observation_noises, b.observation_noises)


def test_step_state_is_linear():
    noise = DiagonalGaussian([0.0, 0.0], [1.0, 1.0])
    spec = time_invariant_spec([[0.9, 0.2], [-0.1, 1.1]], [[1.0], [0.5]], [[1.0, 0.0]], noise,
                               DiagonalGaussian([0.0], [1.0]), horizon=2)
    rng = np.random.default_rng(4)
    x1, x2, xi1, xi2 = (rng.normal(size=2) for _ in range(4))
    u1, u2 = rng.normal(size=1), rng.normal(size=1)
    a, b = 1.7, -0.6
    combined = step_state(spec, 1, a * x1 + b * x2, a * u1 + b * u2, a * xi1 + b * xi2)
    separate = a * step_state(spec, 1, x1, u1, xi1) + b * step_state(spec, 1, x2, u2, xi2)
    np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-12)
