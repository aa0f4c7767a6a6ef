import numpy as np
import pytest

from particle_planning.errors import NoiseHistoryDisabled, ParticleDeath, SpecError
from particle_planning.model import Environment, LinearPolicy, replay_states, time_invariant_spec
from particle_planning.noise import point_mass
from particle_planning.pf import (
    ParticleEnsemble,
    effective_sample_size,
    estimate_state,
    init_ensemble,
    normalized_weights,
    pf_step,
    run_pf_planner,
)


def _ensemble(states, log_weights):
    return ParticleEnsemble(states=np.asarray(states, dtype=np.float64).reshape(-1, 1),
                            log_weights=np.asarray(log_weights, dtype=np.float64), t=1)


def test_init_ensemble(gaussian_scalar_spec):
    ens = init_ensemble(gaussian_scalar_spec, 7)
    assert ens.count == 7 and ens.t == 0
    np.testing.assert_array_equal(ens.log_weights, np.zeros(7))
    np.testing.assert_array_equal(estimate_state(ens), gaussian_scalar_spec.x0)


def test_init_ensemble_needs_a_particle(gaussian_scalar_spec):
    with pytest.raises(SpecError):
        init_ensemble(gaussian_scalar_spec, 0)


def test_estimate_ignores_common_log_weight_shift():
    base = _ensemble([1.0, 2.0, 4.0], [0.0, -1.0, -2.0])
    shifted = _ensemble([1.0, 2.0, 4.0], [3.0, 2.0, 1.0])
    assert estimate_state(base)[0] == estimate_state(shifted)[0]


def test_zero_weight_particles_drop_out():
    ens = _ensemble([1.0, 100.0], [0.0, -np.inf])
    np.testing.assert_array_equal(estimate_state(ens), [1.0])
    np.testing.assert_array_equal(normalized_weights(ens), [1.0, 0.0])


def test_all_zero_weights_raise_death():
    ens = _ensemble([1.0, 2.0], [-np.inf, -np.inf])
    with pytest.raises(ParticleDeath) as info:
        estimate_state(ens)
    assert info.value.t == 1
    assert effective_sample_size(ens) == 0.0


def test_effective_sample_size():
    assert effective_sample_size(_ensemble([0.0] * 4, [0.0] * 4)) == pytest.approx(4.0)
    assert effective_sample_size(_ensemble([0.0] * 4, [0.0, -np.inf, -np.inf, -np.inf])) == 1.0


def test_step_draws_are_reproducible(gaussian_scalar_spec, key):
    ens = init_ensemble(gaussian_scalar_spec, 50)
    a = pf_step(ens, gaussian_scalar_spec, [0.0], [0.4], key)
    b = pf_step(ens, gaussian_scalar_spec, [0.0], [0.4], key)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.log_weights, b.log_weights)


def test_step_records_noise_history(gaussian_scalar_spec, key):
    ens = pf_step(init_ensemble(gaussian_scalar_spec, 20, keep_history=True), gaussian_scalar_spec, [0.0], [0.0], key)
    assert ens.t == 1
    # x0 = 0 and u = 0, so the new states are exactly the drawn noise
    np.testing.assert_array_equal(ens.history_array()[0], ens.states)


def test_history_disabled(gaussian_scalar_spec, key):
    ens = init_ensemble(gaussian_scalar_spec, 20, history_limit=0)
    assert not ens.keeps_history
    ens = pf_step(ens, gaussian_scalar_spec, [0.0], [0.0], key)
    with pytest.raises(NoiseHistoryDisabled):
        ens.history_array()


def test_step_past_horizon(zero_noise_spec, key):
    ens = init_ensemble(zero_noise_spec, 1)
    for t in range(zero_noise_spec.horizon):
        ens = pf_step(ens, zero_noise_spec, [0.0], [1.0], key)
    with pytest.raises(SpecError):
        pf_step(ens, zero_noise_spec, [0.0], [1.0], key)


def test_step_shape_checks(gaussian_scalar_spec, key):
    ens = init_ensemble(gaussian_scalar_spec, 3)
    with pytest.raises(SpecError):
        pf_step(ens, gaussian_scalar_spec, [0.0, 1.0], [0.0], key)
    with pytest.raises(SpecError):
        pf_step(ens, gaussian_scalar_spec, [0.0], [0.0, 1.0], key)


def test_single_particle_tracks_noiseless_system(zero_noise_spec, scalar_policy, key):
    env = Environment.from_key(zero_noise_spec, key)
    result = run_pf_planner(zero_noise_spec, scalar_policy, 1, key.child(1), env)
    assert not result.died
    traj = result.trajectory
    assert traj.steps == zero_noise_spec.horizon
    for t, y_hat in enumerate(result.estimates):
        np.testing.assert_array_equal(y_hat, traj.states[t])


def test_mismatched_record_kills_the_run(key):
    zero = point_mass([0.0])
    spec = time_invariant_spec(1.0, 1.0, 1.0, zero, zero, horizon=3)
    env = Environment(spec, np.ones((3, 1)), np.zeros((3, 1)))
    result = run_pf_planner(spec, LinearPolicy(np.zeros((1, 1))), 5, key, env)
    assert result.died
    assert result.death_time == 1
    assert len(result.estimates) == 1
    assert result.trajectory.steps == 1


def test_full_run_bookkeeping(gaussian_scalar_spec, scalar_policy, key):
    env = Environment.from_key(gaussian_scalar_spec, key)
    result = run_pf_planner(gaussian_scalar_spec, scalar_policy, 200, key.child(9), env, keep_ensembles=True)
    T = gaussian_scalar_spec.horizon
    assert not result.died
    assert len(result.estimates) == T and len(result.ess) == T
    assert len(result.ensembles) == T + 1
    assert result.ensemble.t == T
    np.testing.assert_array_equal(result.estimates[0], gaussian_scalar_spec.x0)
    for t in range(T):
        np.testing.assert_array_equal(result.trajectory.actions[t], scalar_policy(result.estimates[t]))


def test_weight_is_product_of_step_likelihoods(gaussian_scalar_spec, key):
    actions = [[0.4], [-0.3], [0.1]]
    observations = [[0.9], [-0.2], [1.4]]
    ens = init_ensemble(gaussian_scalar_spec, 25, keep_history=True)
    for u, o in zip(actions, observations):
        ens = pf_step(ens, gaussian_scalar_spec, u, o, key)

    eta = gaussian_scalar_spec.obs_noise_seq[0]
    history = ens.history_array()
    log_products = []
    for i in range(ens.count):
        states = replay_states(gaussian_scalar_spec, actions, history[:, i, :])
        residuals = np.asarray(observations) - states[1:]
        log_products.append(float(np.sum(eta.log_density(residuals))))
    expected = np.exp(np.array(log_products) - max(log_products))
    np.testing.assert_allclose(normalized_weights(ens), expected / expected.sum(), rtol=1e-9)
