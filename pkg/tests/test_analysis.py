import math
from dataclasses import replace

import numpy as np
import pytest

from particle_planning.analysis import (
    LINEAR,
    BoundParams,
    action_gap_measure,
    bound_calculator,
    concentration_M,
    concentration_experiment,
    concentration_failure_bound,
    corollary_particle_count,
    coupling_identity_gap,
    decompose_state,
    divergence_attribution,
    draw_open_loop_record,
    ensemble_noise_estimators,
    estimate_assumption_constants,
    likelihood_gamma,
    lipschitz_envelope_factor,
    reconstruct_from_noise,
    sigma_a,
    sigma_ab,
    sigma_ab_bar,
    stability_growth_ratio,
)
from particle_planning.coupled import run_coupled
from particle_planning.errors import NoiseHistoryDisabled, OracleNotApplicable, PreconditionViolation, SpecError
from particle_planning.invariant_suite import params_for_run
from particle_planning.model import LinearPolicy, replay_states, time_invariant_spec
from particle_planning.noise import DiagonalGaussian, point_mass, uniform_atoms
from particle_planning.oracle import EnumerationFiniteSupport, KalmanGaussian
from particle_planning.pf import ParticleEnsemble, estimate_state, init_ensemble, pf_step

REGRESSION = BoundParams(L_r=3.0, L_g=0.5, C_a=0.5, rho_a=3.0, C_b=1.0, subgaussian_m=1.0, d=1, T=3)


@pytest.fixture
def doubling_spec():
    zero = point_mass([0.0])
    return time_invariant_spec(2.0, 1.0, 1.0, zero, zero, horizon=3)


def test_decompose_doubling_system(doubling_spec):
    np.testing.assert_array_equal(decompose_state(doubling_spec, np.zeros((2, 1)), np.ones((2, 1)), 2), [3.0])


def test_decompose_index_checked(doubling_spec):
    with pytest.raises(SpecError):
        decompose_state(doubling_spec, np.zeros((1, 1)), np.ones((1, 1)), 2)


def test_divergence_from_one_action(doubling_spec):
    predicted = divergence_attribution(doubling_spec, [[1.0], [0.0]], [[0.0], [0.0]], 2)
    np.testing.assert_array_equal(predicted, [2.0])
    noises = np.zeros((2, 1))
    gap = replay_states(doubling_spec, [[1.0], [0.0]], noises)[2] - replay_states(doubling_spec, [[0.0], [0.0]], noises)[2]
    np.testing.assert_array_equal(predicted, gap)


def test_noise_estimators_are_weighted_means():
    ens = ParticleEnsemble(states=np.array([[1.0], [3.0]]), log_weights=np.zeros(2), t=1,
                           noise_history=(np.array([[1.0], [3.0]]),))
    np.testing.assert_array_equal(ensemble_noise_estimators(ens), [[2.0]])
    one_alive = ParticleEnsemble(states=ens.states, log_weights=np.array([0.0, -np.inf]), t=1,
                                 noise_history=ens.noise_history)
    np.testing.assert_array_equal(ensemble_noise_estimators(one_alive), [[1.0]])


def test_noise_estimators_need_history(gaussian_scalar_spec):
    with pytest.raises(NoiseHistoryDisabled):
        ensemble_noise_estimators(init_ensemble(gaussian_scalar_spec, 4, keep_history=False))


def test_reconstruction_matches_particle_mean(gaussian_scalar_spec, key):
    ens = init_ensemble(gaussian_scalar_spec, 50, keep_history=True)
    actions = [[0.5], [-0.2], [0.1]]
    for t, (u, o) in enumerate(zip(actions, [[0.3], [1.0], [-0.7]])):
        ens = pf_step(ens, gaussian_scalar_spec, u, o, key)
    rebuilt = reconstruct_from_noise(gaussian_scalar_spec, ensemble_noise_estimators(ens), actions)
    np.testing.assert_allclose(rebuilt, estimate_state(ens), rtol=1e-9, atol=1e-12)


def test_likelihood_gamma_on_hard_instance(lowerbound3):
    gammas = likelihood_gamma(lowerbound3.spec, lowerbound3.observations, np.zeros((3, 1)))
    np.testing.assert_array_equal(gammas, [0.5, 0.25, 0.125])


def test_sigma_sums():
    assert sigma_a(0.5, 3.0, 3) == 3.0
    assert sigma_a(0.5, 3.0, 1) == 1.0
    assert sigma_ab(0.5, 1.0, 0.5, 3) == 2.0
    assert sigma_ab(0.5, 1.0, 0.5, 1) == 0.0
    assert sigma_ab_bar(1.0, 1.0, 2) == 1.0
    assert sigma_ab_bar(1.0, 1.0, 4) == 3.0


def test_envelope_factor_unit_constants():
    assert lipschitz_envelope_factor(1.0, 1.0, sigma_a(1.0, 1.0, 3), 2.0) == 9.0


def test_bound_regression_values():
    report = bound_calculator(REGRESSION)
    assert (report.sigma_a, report.sigma_ab, report.delta_T) == (3.0, 2.0, 36.0)
    assert report.n_expression == pytest.approx(9 * 36 ** 2 / 0.25 ** 2)
    assert report.log_factor == pytest.approx(math.log(60.0))
    assert report.delta_linear is None
    assert not report.corollary_applicable


def test_linear_variant():
    params = BoundParams(L_r=3.0, L_g=0.5, C_a=0.5, rho_a=3.0, C_b=1.0, subgaussian_m=1.0, d=1, T=3,
                         C_ab=1.0, rho_ab=1.0, C_bg=1.0)
    report = bound_calculator(params, LINEAR)
    assert report.sigma_ab_bar == 2.0
    assert report.delta_linear == pytest.approx(54.0)
    assert report.delta_T == report.delta_linear
    assert report.as_row()["variant"] == LINEAR


@pytest.mark.parametrize("changes", [{"epsilon": 0.6}, {"T": 0}, {"L_g": 0.0}, {"p": 1.5}])
def test_invalid_bound_params(changes):
    params = replace(REGRESSION, **changes)
    with pytest.raises(SpecError):
        bound_calculator(params)


def test_linear_variant_needs_its_constants():
    with pytest.raises(SpecError):
        bound_calculator(REGRESSION, LINEAR)


def test_stable_growth_is_polynomial():
    stable = BoundParams(L_r=1.0, L_g=0.5, C_a=0.5, rho_a=1.0, C_b=1.0, subgaussian_m=1.0, d=1, T=16)
    assert bound_calculator(stable).corollary_applicable
    assert stability_growth_ratio(stable) <= 2.0 ** 10


def test_unstable_growth_explodes():
    unstable = BoundParams(L_r=1.0, L_g=1.0, C_a=1.0, rho_a=2.0, C_b=1.0, subgaussian_m=1.0, d=1, T=16)
    assert stability_growth_ratio(unstable) > 2.0 ** 10


def test_assumption_constants_scalar():
    noise = point_mass([0.0])
    spec = time_invariant_spec(0.5, 1.0, 1.0, noise, noise, horizon=4)
    constants = estimate_assumption_constants(spec, np.array([[-0.5]]))
    assert constants["C_a"] == pytest.approx(0.5)
    assert constants["C_b"] == pytest.approx(1.0)
    assert constants["C_bg"] == pytest.approx(0.5)
    assert constants["L_g"] == pytest.approx(0.5)
    doubling = time_invariant_spec(2.0, 1.0, 1.0, noise, noise, horizon=4)
    assert estimate_assumption_constants(doubling, rho_a=2.0)["C_a"] == pytest.approx(2.0)


def test_concentration_constants():
    assert concentration_M(1, 1.0, math.e) == pytest.approx(math.sqrt(5.0))
    assert 4 * 0.1 * concentration_M(1, 1.0, math.e) == pytest.approx(0.8944, abs=1e-4)
    expected = 2 * math.exp(-10 * 0.25 * 0.5 / 3) + 10 * math.exp(-3.0)
    assert concentration_failure_bound(1, 10, 0.5, 3.0, 0.5) == pytest.approx(expected)
    with pytest.raises(PreconditionViolation):
        concentration_M(1, 1.0, 1.0)


def test_concentration_refuses_large_beta(two_atom_spec, key):
    obs, actions = draw_open_loop_record(two_atom_spec, np.zeros((4, 1)), key)
    with pytest.raises(PreconditionViolation):
        concentration_experiment(two_atom_spec, 10, 0.75, 2.0, 1, key, obs, actions)


def test_concentration_needs_finite_noise(gaussian_scalar_spec, key):
    with pytest.raises(OracleNotApplicable):
        concentration_experiment(gaussian_scalar_spec, 10, 0.25, 2.0, 1, key, [[0.0]], [[0.0]])


def test_concentration_report_shape(two_atom_spec, key):
    obs, actions = draw_open_loop_record(two_atom_spec, np.zeros((4, 1)), key.child(0))
    report = concentration_experiment(two_atom_spec, 200, 0.5, 8.0, 20, key.child(1), obs, actions)
    assert report.deaths == 0
    assert len(report.cells) == 10
    assert report.threshold == pytest.approx(2.0 * report.M)
    assert all(0.0 <= cell.frequency <= 1.0 for cell in report.cells)
    assert report.passed


def test_concentration_frequencies_fall_under_a_finite_bound(key):
    # Sharp observations keep gamma_t large, so the bound is below 1 at N = 10^4,
    # while a lone particle on the wrong atom still misses by about 2 > 4 beta M.
    spec = time_invariant_spec(0.5, 1.0, 1.0, uniform_atoms([-1.0, 1.0], subgaussian_m=1.0),
                               DiagonalGaussian([0.0], [0.05]), horizon=2)
    obs, actions = draw_open_loop_record(spec, np.zeros((2, 1)), key.child(0))
    reports = [concentration_experiment(spec, n, 0.15, 12.0, 300, key.child(1, i), obs, actions)
               for i, n in enumerate([1, 10, 10_000])]

    assert reports[0].threshold < 1.9
    assert max(cell.frequency for cell in reports[0].cells) > 0.1
    assert all(report.passed for report in reports)
    for cell in reports[-1].cells:
        assert not cell.vacuous and cell.bound < 1.0
        assert cell.frequency <= cell.bound
    for fewer, more in zip(reports, reports[1:]):
        for small, large in zip(fewer.cells, more.cells):
            assert large.frequency <= small.frequency


def test_concentration_counts_deaths_as_exceedances(lowerbound3, key):
    report = concentration_experiment(lowerbound3.spec, 1, 0.5, 2.0, 16, key, lowerbound3.observations,
                                      np.zeros((3, 1)))
    assert report.deaths >= 1
    last = [cell for cell in report.cells if cell.t == 3]
    assert all(cell.exceedances >= report.deaths for cell in last)


@pytest.fixture
def enumerated_run(two_atom_spec, scalar_policy, avg_l1, key):
    return run_coupled(two_atom_spec, scalar_policy, avg_l1(two_atom_spec), 50, EnumerationFiniteSupport(), key,
                       keep_history=True, keep_ensembles=True)


def test_action_gaps_stay_under_envelopes(enumerated_run, two_atom_spec, scalar_policy):
    report = action_gap_measure(enumerated_run, params_for_run(two_atom_spec, scalar_policy))
    assert report.gaps[0] == 0.0
    assert report.envelope_nonlinear[0] == 0.0
    assert report.envelope_linear is not None
    assert report.dominated()


def test_action_gap_needs_constants(enumerated_run):
    with pytest.raises(PreconditionViolation):
        action_gap_measure(enumerated_run, None)


def test_action_gap_needs_enumerable_noise(gaussian_scalar_spec, scalar_policy, avg_l1, key):
    run = run_coupled(gaussian_scalar_spec, scalar_policy, avg_l1(gaussian_scalar_spec), 8, KalmanGaussian(), key,
                      keep_history=True, keep_ensembles=True)
    with pytest.raises(OracleNotApplicable):
        action_gap_measure(run, REGRESSION)


def test_coupling_identity(enumerated_run, two_atom_spec):
    for t in range(two_atom_spec.horizon + 1):
        assert coupling_identity_gap(two_atom_spec, enumerated_run, t) <= 1e-12


def test_zero_policy_constant_is_floored(two_atom_spec):
    params = params_for_run(two_atom_spec, LinearPolicy(np.zeros((1, 1))))
    assert params.problems() == []


def test_corollary_particle_count_nonlinear():
    params = BoundParams(L_r=1.0, L_g=1.0, C_a=0.5, rho_a=1.0, C_b=0.5, subgaussian_m=1.0, d=1, T=2,
                         epsilon=0.5, p=1.0)
    # T^6 * (d/m) L_r^2 L_g^2 / (eps^2 p) * (1 + C_b^2 T^2) = 64 * 4 * 2
    assert corollary_particle_count(params, "nonlinear") == pytest.approx(512.0)
    assert corollary_particle_count(params, LINEAR) is None


def test_noiseless_transition_needs_no_extra_particles():
    # A point mass has variance proxy 1/m = 0, so m is infinite and M collapses to zero.
    params = replace(REGRESSION, subgaussian_m=math.inf)
    report = bound_calculator(params)
    assert report.n_expression == 0.0
    assert corollary_particle_count(params, "nonlinear") == 0.0
    assert concentration_M(1, math.inf, math.e) == 0.0
