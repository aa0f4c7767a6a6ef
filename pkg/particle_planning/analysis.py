"""
Analytical machinery behind the particle complexity results.

State decomposition, noise-space estimators, the particle concentration
experiment, action-gap envelopes and the particle-count bound calculator.
The bounds are evaluated as bare expressions: hidden universal constants
are never folded in, and the log factor is reported on its own.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from .errors import (
    NoiseHistoryDisabled,
    OracleNotApplicable,
    ParticleDeath,
    PreconditionViolation,
    SpecError,
)
from .model import Environment, SystemSpec, apply_matrix, operator_norm, unroll_noise
from .noise import FiniteSupport
from .oracle import EnumerationFiniteSupport, enumerate_posterior_mean, record_likelihoods
from .pf import ParticleEnsemble, init_ensemble, pf_step, weighted_average
from .streams import StreamKey

logger = logging.getLogger(__name__)

NONLINEAR = "nonlinear"
LINEAR = "linear"


# --------------------------------------------------------------------------
# Decomposition and noise-space estimators
# --------------------------------------------------------------------------

def decompose_state(spec: SystemSpec, actions, noises, t: int) -> np.ndarray:
    """
    x_t from x0, u_0..u_{t-1} and xi_0..xi_{t-1} without iterating the recursion.

    Raises:
        SpecError: t > T or too few actions/noises
    """
    return unroll_noise(spec, actions, noises, t)


def ensemble_noise_estimators(ens: ParticleEnsemble) -> np.ndarray:
    """
    xi_hat_{t,s} for s = 0..t-1: particle noise averaged under the current weights.

    Returns:
        array (t, d)

    Raises:
        NoiseHistoryDisabled: the ensemble kept no history
        ParticleDeath: every weight is zero
    """
    history = ens.history_array()
    if history.shape[0] == 0:
        return np.zeros((0, ens.states.shape[1]))
    return weighted_average(ens, np.transpose(history, (1, 0, 2)))


def reconstruct_from_noise(spec: SystemSpec, noise_estimates, actions) -> np.ndarray:
    """State estimate rebuilt from per-step noise estimates and the actions taken."""
    noise_estimates = np.asarray(noise_estimates, dtype=np.float64).reshape(-1, spec.state_dim)
    return unroll_noise(spec, actions, noise_estimates, noise_estimates.shape[0])


def divergence_attribution(spec: SystemSpec, approx_actions, ideal_actions, t: int) -> np.ndarray:
    """
    x_t - x*_t predicted from the action differences alone:

        sum_s (A_{t-1} ... A_{s+1}) B_s (u_hat_s - u*_s)
    """
    approx_actions = np.asarray(approx_actions, dtype=np.float64).reshape(-1, spec.action_dim)
    ideal_actions = np.asarray(ideal_actions, dtype=np.float64).reshape(-1, spec.action_dim)
    total = np.zeros(spec.state_dim)
    transfer = np.eye(spec.state_dim)
    for s in range(t - 1, -1, -1):
        total = total + transfer @ apply_matrix(spec.B_seq[s], approx_actions[s] - ideal_actions[s])
        transfer = transfer @ spec.A_seq[s]
    return total


def likelihood_gamma(spec: SystemSpec, observations, actions,
                     max_paths: int = EnumerationFiniteSupport.max_paths) -> np.ndarray:
    """
    gamma_1..gamma_t, the likelihood of each observation prefix.

    An impossible observation yields 0 from that step on instead of raising.
    """
    return record_likelihoods(spec, observations, actions, max_paths)


# --------------------------------------------------------------------------
# Bound parameters and sums
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundParams:
    """
    Constants entering the particle complexity bounds.

    C_ab, rho_ab and C_bg are only needed for the linear-policy variant.
    """

    L_r: float
    L_g: float
    C_a: float
    rho_a: float
    C_b: float
    subgaussian_m: float
    d: int
    T: int
    epsilon: float = 0.25
    delta: float = 0.05
    p: float = 1.0
    C_ab: Optional[float] = None
    rho_ab: Optional[float] = None
    C_bg: Optional[float] = None

    def problems(self) -> List[str]:
        """Every violated range condition; empty when valid."""
        issues = []
        for name in ("L_r", "L_g", "C_a", "rho_a", "C_b", "subgaussian_m"):
            if not getattr(self, name) > 0:
                issues.append(f"{name} must be positive")
        for name in ("C_ab", "rho_ab", "C_bg"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                issues.append(f"{name} must be positive")
        if self.d < 1:
            issues.append("d must be at least 1")
        if self.T < 1:
            issues.append("T must be at least 1")
        if not 0 < self.epsilon < 0.5:
            issues.append("epsilon must lie in (0, 1/2)")
        if not 0 < self.delta < 1:
            issues.append("delta must lie in (0, 1)")
        if not 0 < self.p <= 1:
            issues.append("p must lie in (0, 1]")
        return issues

    @property
    def has_linear_constants(self) -> bool:
        return None not in (self.C_ab, self.rho_ab, self.C_bg)


def _geometric(ratio: float, terms: int) -> float:
    """sum_{s=0}^{terms-1} ratio^s; 0 for terms <= 0."""
    return math.fsum(ratio ** s for s in range(max(terms, 0)))


def sigma_a(C_a: float, rho_a: float, t: int) -> float:
    """Sigma_a^(t) = 1 + C_a sum_{s=0}^{t-2} rho_a^s."""
    return 1.0 + C_a * _geometric(rho_a, t - 1)


def sigma_ab(C_a: float, C_b: float, L_g: float, t: int) -> float:
    """Sigma_ab^(t-1) = sum_{s=0}^{t-2} (C_a + C_b L_g)^s (0 when t <= 1)."""
    return _geometric(C_a + C_b * L_g, t - 1)


def sigma_ab_bar(C_ab: float, rho_ab: float, t: int) -> float:
    """Sigma_bar_ab^(t-1) = 1 + C_ab sum_{s=0}^{t-3} rho_ab^s."""
    return 1.0 + C_ab * _geometric(rho_ab, t - 2)


def lipschitz_envelope_factor(L_g: float, C_b: float, sig_a: float, sig_ab: float) -> float:
    """L_g Sigma_a (1 + L_g C_b Sigma_ab): action gap per unit of noise-estimate error."""
    return L_g * sig_a * (1.0 + L_g * C_b * sig_ab)


def linear_envelope_factor(L_g: float, C_bg: float, sig_a: float, sig_ab_bar: float) -> float:
    """L_g Sigma_a (1 + C_bg Sigma_bar_ab)."""
    return L_g * sig_a * (1.0 + C_bg * sig_ab_bar)


# --------------------------------------------------------------------------
# Bound calculator
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundReport:
    """
    Particle complexity quantities for one parameter set.

    n_expression is T^2 Delta_T^2 d m^-1 eps^-2 p^-1, the inside of the
    O-tilde; log_factor = log(d T / delta) is the annotation the O-tilde
    hides and is never multiplied in.
    """

    variant: str
    T: int
    sigma_a: float
    sigma_ab: float
    sigma_ab_bar: Optional[float]
    delta_nonlinear: float
    delta_linear: Optional[float]
    delta_T: float
    n_expression: float
    log_factor: float
    corollary_n: Optional[float]
    corollary_applicable: bool

    def as_row(self) -> Dict[str, object]:
        return asdict(self)


def corollary_particle_count(params: BoundParams, variant: str) -> Optional[float]:
    """Inside of the stable-system corollary's O-tilde for the given variant."""
    T, d, m = params.T, params.d, params.subgaussian_m
    common = d / m * params.L_r ** 2 * params.L_g ** 2 / params.epsilon ** 2 / params.p
    if variant == NONLINEAR:
        return T ** 6 * common * (1.0 + params.C_b ** 2 * T ** 2)
    if not params.has_linear_constants:
        return None
    C_a, C_b, C_bg, C_ab = params.C_a, params.C_b, params.C_bg, params.C_ab
    return (T ** 2 * common * (1.0 + C_a ** 2 * T ** 2)
            * (1.0 + C_b ** 2 + C_b ** 2 * C_a ** 2 * T ** 2)
            * (1.0 + C_bg ** 2 + C_bg ** 2 * C_ab ** 2))


def _corollary_applies(params: BoundParams, variant: str) -> bool:
    if variant == NONLINEAR:
        return params.rho_a <= 1 and params.C_a + params.C_b * params.L_g <= 1
    return params.has_linear_constants and params.rho_a <= 1 and params.rho_ab <= 1


def bound_calculator(params: BoundParams, variant: str = NONLINEAR) -> BoundReport:
    """
    Evaluate Sigma_a, Sigma_ab, Sigma_bar_ab, Delta_T and the particle-count expressions.

    Raises:
        SpecError: T < 1, invalid parameters, or linear variant without its constants
    """
    if params.T < 1:
        raise SpecError(f"T must be at least 1, got {params.T}")
    issues = params.problems()
    if issues:
        raise SpecError("; ".join(issues))
    if variant not in (NONLINEAR, LINEAR):
        raise SpecError(f"variant must be '{NONLINEAR}' or '{LINEAR}', got '{variant}'")
    if variant == LINEAR and not params.has_linear_constants:
        raise SpecError("linear variant needs C_ab, rho_ab and C_bg")

    T = params.T
    s_a = sigma_a(params.C_a, params.rho_a, T)
    s_ab = sigma_ab(params.C_a, params.C_b, params.L_g, T)
    head = params.L_r * params.L_g * s_a * (1.0 + params.C_b * s_a)
    delta_nonlinear = head * (1.0 + params.L_g * params.C_b * s_ab)
    s_ab_bar = delta_linear = None
    if params.has_linear_constants:
        s_ab_bar = sigma_ab_bar(params.C_ab, params.rho_ab, T)
        delta_linear = head * (1.0 + params.C_bg * s_ab_bar)
    delta_T = delta_nonlinear if variant == NONLINEAR else delta_linear

    n_expression = T ** 2 * delta_T ** 2 * params.d / params.subgaussian_m / params.epsilon ** 2 / params.p
    return BoundReport(
        variant=variant,
        T=T,
        sigma_a=s_a,
        sigma_ab=s_ab,
        sigma_ab_bar=s_ab_bar,
        delta_nonlinear=delta_nonlinear,
        delta_linear=delta_linear,
        delta_T=delta_T,
        n_expression=n_expression,
        log_factor=math.log(params.d * T / params.delta),
        corollary_n=corollary_particle_count(params, variant),
        corollary_applicable=_corollary_applies(params, variant),
    )


def stability_growth_ratio(params: BoundParams, variant: str = NONLINEAR) -> float:
    """n_expression(2T) / n_expression(T) with every other constant fixed."""
    doubled = replace(params, T=2 * params.T)
    return bound_calculator(doubled, variant).n_expression / bound_calculator(params, variant).n_expression


def estimate_assumption_constants(spec: SystemSpec, policy_gain: Optional[np.ndarray] = None,
                                  rho_a: float = 1.0, rho_ab: float = 1.0) -> Dict[str, float]:
    """
    Tightest constants the stability assumptions allow for this spec.

    With the decay rates fixed by the caller, C_a (and C_ab) are the largest
    ratio ||A_{t2} ... A_{t1}|| / rho^(t2 - t1) over all windows, C_b is
    max ||B_t|| and C_bg is max ||B_t G||.
    """
    T = spec.horizon
    constants = {"rho_a": rho_a, "C_b": max(operator_norm(B) for B in spec.B_seq)}
    constants["C_a"] = _window_constant(spec.A_seq, rho_a, T)
    if policy_gain is not None:
        G = np.atleast_2d(policy_gain)
        closed_loop = [A + B @ G for A, B in zip(spec.A_seq, spec.B_seq)]
        constants["rho_ab"] = rho_ab
        constants["C_ab"] = _window_constant(closed_loop, rho_ab, T)
        constants["C_bg"] = max(operator_norm(B @ G) for B in spec.B_seq)
        constants["L_g"] = operator_norm(G)
    return constants


def _window_constant(matrices: Sequence[np.ndarray], rho: float, T: int) -> float:
    best = 1e-12
    for t1 in range(T):
        product = np.eye(matrices[0].shape[0])
        for t2 in range(t1, T):
            product = matrices[t2] @ product
            best = max(best, operator_norm(product) / rho ** (t2 - t1))
    return best


# --------------------------------------------------------------------------
# Particle concentration experiment
# --------------------------------------------------------------------------

def concentration_M(d: int, m: float, beta_prime: float) -> float:
    """M = sqrt((d/m) (1 + 2 sqrt(log beta'/d) + 2 log beta'/d)), beta' > 1."""
    if beta_prime <= 1:
        raise PreconditionViolation(f"beta' must exceed 1, got {beta_prime}")
    ratio = math.log(beta_prime) / d
    return math.sqrt(d / m * (1.0 + 2.0 * math.sqrt(ratio) + 2.0 * ratio))


def concentration_failure_bound(d: int, N: int, beta: float, beta_prime: float, gamma_t: float) -> float:
    """(d+1) exp(-N beta^2 gamma_t / 3) + N exp(-beta')."""
    return (d + 1) * math.exp(-N * beta ** 2 * gamma_t / 3.0) + N * math.exp(-beta_prime)


def draw_open_loop_record(spec: SystemSpec, actions, key: StreamKey):
    """
    Observation record o_1..o_n produced by applying fixed actions to the true system.

    Returns:
        (observations, actions) as arrays (n, obs_dim), (n, k)
    """
    actions = np.asarray(actions, dtype=np.float64).reshape(-1, spec.action_dim)
    env = Environment.from_key(spec, key)
    observations = np.array([env.step(u) for u in actions]).reshape(-1, spec.obs_dim)
    return observations, actions


@dataclass(frozen=True)
class ConcentrationCell:
    t: int
    s: int
    exceedances: int
    frequency: float
    bound: float
    vacuous: bool
    passed: bool


@dataclass(frozen=True)
class ConcentrationReport:
    """Per-(t, s) exceedance frequency of ||xi_hat - xi_tilde|| > 4 beta M against the bound."""

    N: int
    beta: float
    beta_prime: float
    M: float
    threshold: float
    replications: int
    deaths: int
    cells: List[ConcentrationCell] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(cell.passed for cell in self.cells)


def concentration_experiment(spec: SystemSpec, N: int, beta: float, beta_prime: float, replications: int,
                             key: StreamKey, observations, actions, subgaussian_m: Optional[float] = None,
                             max_paths: int = EnumerationFiniteSupport.max_paths,
                             progress: bool = False) -> ConcentrationReport:
    """
    Fresh ensembles on a fixed record versus the exact noise posterior.

    A replication whose ensemble dies at time t counts as an exceedance
    for every pair at that time and later.

    Args:
        spec (SystemSpec): finite-support transition noise
        N (int): particles per replication
        beta (float): accuracy parameter, must be <= 1/2
        beta_prime (float): tail parameter, must exceed 1
        replications (int): fresh ensembles
        key (StreamKey): replication r uses key/r
        observations, actions: the fixed record o_1..o_T, u_0..u_{T-1}
        subgaussian_m (float, optional): defaults to the declared m of the transition noise

    Returns:
        ConcentrationReport: one cell per (t, s)
    """
    if beta > 0.5:
        raise PreconditionViolation(f"beta must be at most 1/2, got {beta}")
    if not all(isinstance(mu, FiniteSupport) for mu in spec.transition_noise_seq):
        raise OracleNotApplicable("concentration experiment needs finite-support transition noise")
    observations = np.asarray(observations, dtype=np.float64).reshape(-1, spec.obs_dim)
    actions = np.asarray(actions, dtype=np.float64).reshape(-1, spec.action_dim)
    horizon = observations.shape[0]
    if subgaussian_m is None:
        declared = [mu.subgaussian_m for mu in spec.transition_noise_seq[:horizon]]
        if any(m is None for m in declared):
            raise PreconditionViolation("transition noise has no declared subgaussian_m")
        subgaussian_m = min(declared)

    M = concentration_M(spec.state_dim, subgaussian_m, beta_prime)
    threshold = 4.0 * beta * M
    exact = [enumerate_posterior_mean(spec, observations[:t], actions[:t], max_paths) for t in range(1, horizon + 1)]

    exceed = np.zeros((horizon, horizon), dtype=np.int64)
    deaths = 0
    for r in tqdm(range(replications), desc=f"📊 concentration N={N}", disable=not progress, leave=False):
        ens = init_ensemble(spec, N, keep_history=True)
        particle_key = key.child(r)
        dead_from = None
        for t in range(1, horizon + 1):
            ens = pf_step(ens, spec, actions[t - 1], observations[t - 1], particle_key)
            try:
                xi_hat = ensemble_noise_estimators(ens)
            except ParticleDeath:
                dead_from = t
                break
            errors = np.linalg.norm(xi_hat - exact[t - 1].xi_tilde, axis=1)
            exceed[t - 1, :t] += errors > threshold
        if dead_from is not None:
            deaths += 1
            for t in range(dead_from, horizon + 1):
                exceed[t - 1, :t] += 1

    cells = []
    for t in range(1, horizon + 1):
        bound = concentration_failure_bound(spec.state_dim, N, beta, beta_prime, exact[t - 1].gamma)
        vacuous = bound >= 1.0
        for s in range(t):
            frequency = exceed[t - 1, s] / replications
            sigma = math.sqrt(bound * (1.0 - bound) / replications) if not vacuous else 0.0
            cells.append(ConcentrationCell(
                t=t, s=s, exceedances=int(exceed[t - 1, s]), frequency=frequency, bound=bound,
                vacuous=vacuous, passed=vacuous or frequency <= bound + 3.0 * sigma,
            ))
    if deaths:
        logger.warning(f"⚠️ {deaths}/{replications} concentration replications died (N={N})")
    return ConcentrationReport(N=N, beta=beta, beta_prime=beta_prime, M=M, threshold=threshold,
                               replications=replications, deaths=deaths, cells=cells)


# --------------------------------------------------------------------------
# Action gap envelopes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ActionGapReport:
    """
    Measured ||u_hat_t - u*_t|| and the envelopes that bound it.

    eps_hat is the largest ||xi_hat_{t,s} - xi_tilde_{t,s}|| over the run.
    """

    gaps: np.ndarray
    envelope_nonlinear: np.ndarray
    envelope_linear: Optional[np.ndarray]
    eps_hat: float

    def dominated(self, rtol: float = 1e-9, atol: float = 1e-12) -> bool:
        ok = np.all(self.gaps <= self.envelope_nonlinear * (1 + rtol) + atol)
        if self.envelope_linear is not None:
            ok = ok and np.all(self.gaps <= self.envelope_linear * (1 + rtol) + atol)
        return bool(ok)


def noise_estimate_errors(run, max_paths: int = EnumerationFiniteSupport.max_paths) -> np.ndarray:
    """max_s ||xi_hat_{t,s} - xi_tilde_{t,s}|| for each t at which an action was taken (0 at t = 0)."""
    spec = run.spec
    if not run.approx_ensembles:
        raise NoiseHistoryDisabled("coupled run kept no per-step ensembles")
    observations, actions = run.approx.observations, run.approx.actions
    errors = [0.0]
    for t in range(1, len(run.estimates_approx)):
        ens = run.approx_ensembles[t]
        xi_hat = ensemble_noise_estimators(ens)
        xi_tilde = enumerate_posterior_mean(spec, observations[:t], actions[:t], max_paths).xi_tilde
        errors.append(float(np.max(np.linalg.norm(xi_hat - xi_tilde, axis=1))))
    return np.array(errors)


def action_gap_measure(run, params: Optional[BoundParams],
                       max_paths: int = EnumerationFiniteSupport.max_paths) -> ActionGapReport:
    """
    Action gaps of a coupled run with their theoretical envelopes.

    The envelope at t is L_g Sigma_a^(t) (1 + L_g C_b Sigma_ab^(t-1)) eps_hat
    (and the linear-policy analogue when its constants are given); at t = 0
    both actions are g(x0), so gap and envelope are 0.

    Raises:
        PreconditionViolation: no assumption constants supplied
        OracleNotApplicable: transition noise is not finite-support
        NoiseHistoryDisabled: the run kept no ensembles
    """
    if params is None:
        raise PreconditionViolation("action gap envelopes need the assumption constants")
    if not all(isinstance(mu, FiniteSupport) for mu in run.spec.transition_noise_seq):
        raise OracleNotApplicable("action gap envelopes need exact enumeration")

    steps = len(run.estimates_approx)
    gaps = np.linalg.norm(run.approx.actions[:steps] - run.ideal.actions[:steps], axis=1)
    eps_hat = float(np.max(noise_estimate_errors(run, max_paths))) if steps else 0.0

    nonlinear = np.zeros(steps)
    linear = np.zeros(steps) if params.has_linear_constants else None
    for t in range(1, steps):
        s_a = sigma_a(params.C_a, params.rho_a, t)
        nonlinear[t] = lipschitz_envelope_factor(
            params.L_g, params.C_b, s_a, sigma_ab(params.C_a, params.C_b, params.L_g, t)) * eps_hat
        if linear is not None:
            linear[t] = linear_envelope_factor(
                params.L_g, params.C_bg, s_a, sigma_ab_bar(params.C_ab, params.rho_ab, t)) * eps_hat
    return ActionGapReport(gaps=gaps, envelope_nonlinear=nonlinear, envelope_linear=linear, eps_hat=eps_hat)


def coupling_identity_gap(spec: SystemSpec, run, t: int,
                          max_paths: int = EnumerationFiniteSupport.max_paths) -> float:
    """
    Largest difference in gamma_t and Gamma_{t,s} between the approximate and
    the ideal record of a coupled run, relative to gamma_t.
    """
    approx = enumerate_posterior_mean(spec, run.approx.observations[:t], run.approx.actions[:t], max_paths)
    ideal = enumerate_posterior_mean(spec, run.ideal.observations[:t], run.ideal.actions[:t], max_paths)
    scale = max(approx.gamma, ideal.gamma)
    diffs = [abs(approx.gamma - ideal.gamma)]
    if t:
        diffs.append(float(np.max(np.abs(approx.Gamma - ideal.Gamma))))
    return max(diffs) / scale


__all__ = [
    "ActionGapReport",
    "BoundParams",
    "BoundReport",
    "ConcentrationCell",
    "ConcentrationReport",
    "LINEAR",
    "NONLINEAR",
    "action_gap_measure",
    "bound_calculator",
    "concentration_M",
    "concentration_experiment",
    "concentration_failure_bound",
    "corollary_particle_count",
    "coupling_identity_gap",
    "decompose_state",
    "draw_open_loop_record",
    "divergence_attribution",
    "ensemble_noise_estimators",
    "estimate_assumption_constants",
    "likelihood_gamma",
    "linear_envelope_factor",
    "lipschitz_envelope_factor",
    "noise_estimate_errors",
    "reconstruct_from_noise",
    "sigma_a",
    "sigma_ab",
    "sigma_ab_bar",
    "stability_growth_ratio",
]
