"""
Property suite behind the `validate` command.

Each property runs over randomized small systems (or the configured one)
and reports pass/fail with a short detail line instead of raising.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional

import numpy as np
from tqdm import tqdm

from .analysis import (
    BoundParams,
    action_gap_measure,
    bound_calculator,
    concentration_experiment,
    concentration_M,
    coupling_identity_gap,
    decompose_state,
    divergence_attribution,
    ensemble_noise_estimators,
    estimate_assumption_constants,
    likelihood_gamma,
    lipschitz_envelope_factor,
    reconstruct_from_noise,
    sigma_a,
    sigma_ab,
    stability_growth_ratio,
)
from .coupled import run_coupled
from .errors import ParticleDeath, ParticlePlanningError, PreconditionViolation
from .lowerbound import build_lowerbound_process, run_death_experiment
from .model import (
    AvgL1Reward,
    Environment,
    LinearPolicy,
    SystemSpec,
    replay_states,
    validate_spec,
)
from .noise import DiagonalGaussian, FiniteSupport
from .oracle import EnumerationFiniteSupport
from .pf import estimate_state, run_pf_planner
from .streams import ROLE_SUITE, StreamKey

logger = logging.getLogger(__name__)

DEFAULT_CASES = {
    "decomposition": 1000,
    "reconstruction": 1000,
    "coupling_identity": 1000,
    "divergence_attribution": 1000,
    "envelope_dominance": 200,
}


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    cases: int
    detail: str = ""


def _relative_gap(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


# --------------------------------------------------------------------------
# Random instances
# --------------------------------------------------------------------------

def random_finite_spec(rng: np.random.Generator, max_dim: int = 2, max_horizon: int = 4) -> SystemSpec:
    """
    Small time-varying system with two-atom integer transition noise and
    Gaussian observations, so path enumeration is exact and cheap.
    """
    d = int(rng.integers(1, max_dim + 1))
    k = int(rng.integers(1, max_dim + 1))
    m = int(rng.integers(1, max_dim + 1))
    T = int(rng.integers(1, max_horizon + 1))
    first = rng.integers(-2, 3, size=d)
    second = first + rng.integers(1, 3, size=d)
    mass = float(rng.uniform(0.2, 0.8))
    mu = FiniteSupport(np.array([first, second], dtype=np.float64), np.array([mass, 1.0 - mass]), subgaussian_m=1.0)
    eta = DiagonalGaussian(np.zeros(m), np.full(m, float(rng.uniform(0.5, 2.0))))
    return SystemSpec(
        state_dim=d,
        action_dim=k,
        obs_dim=m,
        horizon=T,
        A_seq=tuple(rng.normal(scale=0.6, size=(d, d)) for _ in range(T)),
        B_seq=tuple(rng.normal(scale=0.8, size=(d, k)) for _ in range(T)),
        C_seq=tuple(rng.normal(size=(m, d)) for _ in range(T)),
        transition_noise_seq=(mu,) * T,
        obs_noise_seq=(eta,) * T,
        x0=rng.normal(size=d),
    )


def random_gain(rng: np.random.Generator, spec: SystemSpec) -> LinearPolicy:
    return LinearPolicy(rng.normal(scale=0.5, size=(spec.action_dim, spec.state_dim)))


# --------------------------------------------------------------------------
# Properties
# --------------------------------------------------------------------------

def check_spec_validation(specs: List[SystemSpec]) -> PropertyResult:
    problems = [p for spec in specs for p in validate_spec(spec)]
    return PropertyResult("spec_validation", not problems, len(specs), "; ".join(problems[:5]))


def check_decomposition(key: StreamKey, cases: int, progress: bool = False) -> PropertyResult:
    """Unrolled state equals the iterated recursion at every t."""
    worst = 0.0
    for case in tqdm(range(cases), desc="decomposition", disable=not progress, leave=False):
        rng = key.child(case).generator()
        spec = random_finite_spec(rng, max_dim=3, max_horizon=6)
        actions = rng.normal(size=(spec.horizon, spec.action_dim))
        noises = rng.normal(size=(spec.horizon, spec.state_dim))
        states = replay_states(spec, actions, noises)
        for t in range(spec.horizon + 1):
            worst = max(worst, _relative_gap(decompose_state(spec, actions, noises, t), states[t]))
    return PropertyResult("decomposition", worst <= 1e-12, cases, f"max relative gap {worst:.3g}")


def check_reconstruction(key: StreamKey, cases: int, progress: bool = False) -> PropertyResult:
    """Particle estimate equals the state rebuilt from the weighted noise estimates."""
    worst = 0.0
    for case in tqdm(range(cases), desc="reconstruction", disable=not progress, leave=False):
        case_key = key.child(case)
        rng = case_key.generator()
        spec = random_finite_spec(rng)
        result = run_pf_planner(spec, random_gain(rng, spec), 32, case_key.child(0),
                                Environment.from_key(spec, case_key.child(1)),
                                keep_history=True, keep_ensembles=True)
        actions = result.trajectory.actions
        for ens in result.ensembles:
            try:
                rebuilt = reconstruct_from_noise(spec, ensemble_noise_estimators(ens), actions[:ens.t])
                worst = max(worst, _relative_gap(rebuilt, estimate_state(ens)))
            except ParticleDeath:
                break
    return PropertyResult("reconstruction", worst <= 1e-9, cases, f"max relative gap {worst:.3g}")


def _coupled_cases(key: StreamKey, cases: int, keep_history: bool = False, progress: bool = False, desc: str = ""):
    for case in tqdm(range(cases), desc=desc, disable=not progress, leave=False):
        case_key = key.child(case)
        rng = case_key.generator()
        spec = random_finite_spec(rng)
        policy = random_gain(rng, spec)
        run = run_coupled(spec, policy, AvgL1Reward(spec.state_dim, spec.horizon), 16, EnumerationFiniteSupport(),
                          case_key.child(0), keep_history=keep_history, keep_ensembles=keep_history)
        yield spec, policy, run


def check_coupling_identity(key: StreamKey, cases: int, progress: bool = False) -> PropertyResult:
    """gamma_t and Gamma_{t,s} agree between the approximate and the ideal record."""
    worst = 0.0
    for spec, _, run in _coupled_cases(key, cases, progress=progress, desc="coupling identity"):
        for t in range(1, run.approx.steps + 1):
            worst = max(worst, coupling_identity_gap(spec, run, t))
    return PropertyResult("coupling_identity", worst <= 1e-12, cases, f"max relative gap {worst:.3g}")


def check_divergence_attribution(key: StreamKey, cases: int, progress: bool = False) -> PropertyResult:
    """x_t - x*_t is explained by the action differences alone."""
    worst = 0.0
    for spec, _, run in _coupled_cases(key, cases, progress=progress, desc="divergence attribution"):
        for t in range(run.approx.steps + 1):
            predicted = divergence_attribution(spec, run.approx.actions, run.ideal.actions, t)
            actual = run.approx.states[t] - run.ideal.states[t]
            scale = max(1.0, np.linalg.norm(run.approx.states[t]), np.linalg.norm(run.ideal.states[t]))
            worst = max(worst, float(np.linalg.norm(predicted - actual) / scale))
    return PropertyResult("divergence_attribution", worst <= 1e-9, cases, f"max relative gap {worst:.3g}")


def params_for_run(spec: SystemSpec, policy: LinearPolicy) -> BoundParams:
    """Assumption constants of a coupled run, tightest for unit decay rates."""
    constants = estimate_assumption_constants(spec, policy.G)
    return BoundParams(
        L_r=1.0,
        L_g=max(policy.lipschitz, 1e-12),
        C_a=constants["C_a"],
        rho_a=constants["rho_a"],
        C_b=max(constants["C_b"], 1e-12),
        subgaussian_m=1.0,
        d=spec.state_dim,
        T=spec.horizon,
        C_ab=constants["C_ab"],
        rho_ab=constants["rho_ab"],
        C_bg=max(constants["C_bg"], 1e-12),
    )


def check_envelope_dominance(key: StreamKey, cases: int, progress: bool = False) -> PropertyResult:
    """Measured action gaps never exceed the Lipschitz or the linear-policy envelope."""
    violations = 0
    for spec, policy, run in _coupled_cases(key, cases, keep_history=True, progress=progress, desc="envelope"):
        if run.death_time is not None and run.death_time < spec.horizon:
            continue
        report = action_gap_measure(run, params_for_run(spec, policy))
        violations += not report.dominated()
    return PropertyResult("envelope_dominance", violations == 0, cases, f"{violations} violations")


def check_bound_regressions() -> PropertyResult:
    """Hand-computed values of the bound arithmetic."""
    failures = []
    params = BoundParams(L_r=3.0, L_g=0.5, C_a=0.5, rho_a=3.0, C_b=1.0, subgaussian_m=1.0, d=1, T=3)
    report = bound_calculator(params)
    expected = {"sigma_a": 3.0, "sigma_ab": 2.0, "delta_T": 36.0}
    for name, value in expected.items():
        if not math.isclose(getattr(report, name), value, rel_tol=1e-12):
            failures.append(f"{name} = {getattr(report, name)!r}, expected {value}")
    envelope = lipschitz_envelope_factor(1.0, 1.0, sigma_a(1.0, 1.0, 3), sigma_ab(1.0, 0.0, 1.0, 3))
    if not math.isclose(envelope, 9.0, rel_tol=1e-12):
        failures.append(f"envelope factor {envelope!r}, expected 9")
    if not math.isclose(concentration_M(1, 1.0, math.e), math.sqrt(5.0), rel_tol=1e-12):
        failures.append("M with d = m = log beta' = 1 is not sqrt(5)")
    stable = BoundParams(L_r=1.0, L_g=0.5, C_a=0.5, rho_a=1.0, C_b=1.0, subgaussian_m=1.0, d=1, T=4)
    horizons = (4, 8, 16, 32, 64)
    for T in horizons:
        ratio = stability_growth_ratio(replace(stable, T=T))
        if ratio > 2.0 ** 10:
            failures.append(f"growth ratio {ratio:.4g} at T={T} exceeds 2^10")
    return PropertyResult("bound_regressions", not failures, len(expected) + 2 + len(horizons), "; ".join(failures))


def check_lowerbound_exactness(key: StreamKey) -> PropertyResult:
    """Weights stay exactly 0 or 1 and survivors follow x_t = t."""
    failures = []
    instance = build_lowerbound_process(5)
    gammas = likelihood_gamma(instance.spec, instance.observations, np.zeros((5, 1)))
    if not np.array_equal(gammas, 2.0 ** -np.arange(1, 6)):
        failures.append(f"gamma_t = {gammas.tolist()}, expected 2^-t")
    report = run_death_experiment(3, 8, 200, key)
    if not report.survivor_paths_ok:
        failures.append("a surviving particle left the path x_t = t")
    return PropertyResult("lowerbound_exactness", not failures, 2, "; ".join(failures))


def check_concentration_precondition(key: StreamKey) -> PropertyResult:
    """beta above 1/2 is refused."""
    instance = build_lowerbound_process(2)
    spec = instance.spec.with_noise(obs_noise_seq=(DiagonalGaussian([0.0], [1.0]),) * 2)
    try:
        concentration_experiment(spec, 10, 0.75, 2.0, 1, key, instance.observations, np.zeros((2, 1)))
    except PreconditionViolation as exc:
        return PropertyResult("concentration_precondition", True, 1, f"refused: {exc}")
    return PropertyResult("concentration_precondition", False, 1, "beta = 0.75 was accepted")


def _guarded(name: str, check: Callable[[], PropertyResult]) -> PropertyResult:
    try:
        return check()
    except ParticlePlanningError as exc:
        logger.error(f"❌ {name} raised {type(exc).__name__}: {exc}")
        return PropertyResult(name, False, 0, f"{type(exc).__name__}: {exc}")


def run_invariant_suite(specs: List[SystemSpec], key: StreamKey, cases: Optional[int] = None,
                        progress: bool = False) -> List[PropertyResult]:
    """
    Run every property.

    Args:
        specs (List[SystemSpec]): configured systems to validate
        key (StreamKey): suite root; property i uses key/(suite, i)
        cases (int, optional): randomized cases per property (defaults in DEFAULT_CASES)
        progress (bool): show progress bars

    Returns:
        List[PropertyResult]: one result per property, in a fixed order
    """

    def count(name):
        return DEFAULT_CASES[name] if cases is None else cases

    def sub(i):
        return key.child(ROLE_SUITE, i)

    checks = [
        ("spec_validation", lambda: check_spec_validation(specs)),
        ("decomposition", lambda: check_decomposition(sub(1), count("decomposition"), progress)),
        ("reconstruction", lambda: check_reconstruction(sub(2), count("reconstruction"), progress)),
        ("coupling_identity", lambda: check_coupling_identity(sub(3), count("coupling_identity"), progress)),
        ("divergence_attribution",
         lambda: check_divergence_attribution(sub(4), count("divergence_attribution"), progress)),
        ("envelope_dominance", lambda: check_envelope_dominance(sub(5), count("envelope_dominance"), progress)),
        ("bound_regressions", check_bound_regressions),
        ("lowerbound_exactness", lambda: check_lowerbound_exactness(sub(7))),
        ("concentration_precondition", lambda: check_concentration_precondition(sub(8))),
    ]
    results = []
    for name, check in checks:
        result = _guarded(name, check)
        status = "✅" if result.passed else "❌"
        logger.info(f"{status} {result.name}: {result.detail}")
        results.append(result)
    return results


__all__ = [
    "DEFAULT_CASES",
    "PropertyResult",
    "params_for_run",
    "random_finite_spec",
    "random_gain",
    "run_invariant_suite",
]
