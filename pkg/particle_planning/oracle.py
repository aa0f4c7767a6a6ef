"""
Exact-inference estimators for the ideal process.

All oracles answer the same question: given the observations o_1..o_t and
the actions u_0..u_{t-1}, what is the posterior mean of x_t? Kalman
filtering handles Gaussian (and degenerate point-mass) noise; path
enumeration and lattice forward filtering handle finite-support
transition noise; the reference filter is a large particle filter used as
a surrogate when nothing exact applies.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (
    EnumerationBudgetExceeded,
    ImpossibleObservation,
    OracleNotApplicable,
    SingularInnovation,
    SpecError,
)
from .model import SystemSpec, apply_matrix, unroll_noise
from .noise import DiagonalGaussian, FiniteSupport
from .pf import estimate_state, init_ensemble, pf_step
from .streams import StreamKey

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Oracle kinds
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KalmanGaussian:
    name: str = "kalman"


@dataclass(frozen=True)
class EnumerationFiniteSupport:
    max_paths: int = 1 << 20
    name: str = "enumeration"


@dataclass(frozen=True)
class LatticeForward:
    max_support: int = 100_000
    name: str = "lattice"


@dataclass(frozen=True)
class ReferenceFilter:
    n_ref: int = 10_000
    name: str = "reference"


def _gaussian_like(dist) -> bool:
    return isinstance(dist, DiagonalGaussian) or (isinstance(dist, FiniteSupport) and dist.is_point_mass)


def oracle_applicable(kind, spec: SystemSpec) -> Optional[str]:
    """None when `kind` can serve `spec`, otherwise the reason it cannot."""
    if isinstance(kind, KalmanGaussian):
        if not all(_gaussian_like(d) for d in spec.transition_noise_seq + spec.obs_noise_seq):
            return "kalman oracle needs Gaussian (or point-mass) transition and observation noise"
    elif isinstance(kind, (EnumerationFiniteSupport, LatticeForward)):
        if not all(isinstance(d, FiniteSupport) for d in spec.transition_noise_seq):
            return f"{kind.name} oracle needs finite-support transition noise"
    elif not isinstance(kind, ReferenceFilter):
        return f"unknown oracle kind {kind!r}"
    return None


def _check_applicable(kind, spec: SystemSpec):
    reason = oracle_applicable(kind, spec)
    if reason is not None:
        raise OracleNotApplicable(reason)


def _record(spec: SystemSpec, observations, actions):
    observations = np.asarray(observations, dtype=np.float64).reshape(-1, spec.obs_dim)
    actions = np.asarray(actions, dtype=np.float64).reshape(-1, spec.action_dim)
    t = observations.shape[0]
    if actions.shape[0] != t:
        raise SpecError(f"record has {t} observations but {actions.shape[0]} actions")
    if t > spec.horizon:
        raise SpecError(f"record of length {t} exceeds the horizon {spec.horizon}")
    return observations, actions, t


# --------------------------------------------------------------------------
# Kalman filter
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KalmanResult:
    mean: np.ndarray
    covariance: np.ndarray


def kalman_posterior_mean(spec: SystemSpec, observations, actions) -> KalmanResult:
    """
    Exact Gaussian filtering after t observations.

    Point-mass noise is treated as a zero-variance Gaussian; while the prior
    covariance is exactly zero the state is known and the update is skipped.

    Raises:
        OracleNotApplicable: non-Gaussian noise
        SingularInnovation: innovation covariance not invertible
    """
    _check_applicable(KalmanGaussian(), spec)
    observations, actions, t = _record(spec, observations, actions)
    mean = spec.x0.copy()
    cov = np.zeros((spec.state_dim, spec.state_dim))
    for s in range(t):
        A, B = spec.A_seq[s], spec.B_seq[s]
        mu = spec.transition_noise_seq[s]
        mean = apply_matrix(A, mean) + apply_matrix(B, actions[s]) + mu.mean()
        cov = A @ cov @ A.T + mu.covariance()
        if not np.any(cov):
            continue
        C, eta = spec.C_seq[s], spec.obs_noise_seq[s]
        innovation_cov = C @ cov @ C.T + eta.covariance()
        if np.linalg.matrix_rank(innovation_cov) < spec.obs_dim:
            raise SingularInnovation(f"innovation covariance singular at t={s + 1}")
        gain = np.linalg.solve(innovation_cov, C @ cov).T
        innovation = observations[s] - apply_matrix(C, mean) - eta.mean()
        mean = mean + gain @ innovation
        cov = cov - gain @ C @ cov
        cov = 0.5 * (cov + cov.T)
    return KalmanResult(mean=mean, covariance=cov)


# --------------------------------------------------------------------------
# Path enumeration
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EnumerationResult:
    """
    Exact noise-space posterior.

    gamma is the record likelihood; Gamma[s] = sum over paths of
    mass * likelihood * xi'_s; xi_tilde[s] = Gamma[s] / gamma.
    """

    mean: np.ndarray
    xi_tilde: np.ndarray
    gamma: float
    Gamma: np.ndarray
    gammas: np.ndarray
    n_paths: int
    log_gamma: float


def _enumerate(spec: SystemSpec, observations, actions, max_paths: int):
    """
    Breadth-first enumeration of noise paths with eager pruning.

    Yields (s, weights, noises, states, step_likelihood) after processing
    o_{s+1}. Weights are the surviving paths' posterior probabilities
    (renormalized every step); step_likelihood is p(o_{s+1} | o_{1:s}), so
    gamma_t is the running product. No weights survive an impossible
    observation.
    """
    weights = np.ones(1)
    noises = np.zeros((1, 0, spec.state_dim))
    states = spec.x0[None, :].copy()
    for s in range(observations.shape[0]):
        mu = spec.transition_noise_seq[s]
        K = mu.support_size
        states = np.repeat(apply_matrix(spec.A_seq[s], states) + apply_matrix(spec.B_seq[s], actions[s]), K, axis=0)
        states = states + np.tile(mu.points, (weights.shape[0], 1))
        noises = np.concatenate(
            [np.repeat(noises, K, axis=0), np.tile(mu.points, (weights.shape[0], 1))[:, None, :]], axis=1)
        residuals = observations[s] - apply_matrix(spec.C_seq[s], states)
        weights = np.repeat(weights, K) * np.tile(mu.masses, weights.shape[0]) * spec.obs_noise_seq[s].density(residuals)
        keep = weights > 0
        weights, noises, states = weights[keep], noises[keep], states[keep]
        if weights.shape[0] > max_paths:
            raise EnumerationBudgetExceeded(f"{weights.shape[0]} live paths at t={s + 1} exceed budget {max_paths}")
        step_likelihood = math.fsum(weights)
        if step_likelihood > 0:
            weights = weights / step_likelihood
        yield s, weights, noises, states, step_likelihood


def enumerate_posterior_mean(spec: SystemSpec, observations, actions,
                             max_paths: int = EnumerationFiniteSupport.max_paths) -> EnumerationResult:
    """
    Exact posterior mean of x_t by summing over every transition-noise path.

    gamma may underflow to 0 on long records; log_gamma and xi_tilde do not.

    Raises:
        OracleNotApplicable: transition noise is not finite-support
        EnumerationBudgetExceeded: surviving paths exceed max_paths
        ImpossibleObservation: gamma_t = 0
    """
    _check_applicable(EnumerationFiniteSupport(), spec)
    observations, actions, t = _record(spec, observations, actions)
    if t == 0:
        return EnumerationResult(mean=spec.x0.copy(), xi_tilde=np.zeros((0, spec.state_dim)), gamma=1.0,
                                 Gamma=np.zeros((0, spec.state_dim)), gammas=np.zeros(0), n_paths=1, log_gamma=0.0)
    gammas = []
    gamma, log_gamma = 1.0, 0.0
    for s, weights, noises, _, step_likelihood in _enumerate(spec, observations, actions, max_paths):
        if weights.shape[0] == 0:
            raise ImpossibleObservation(s + 1)
        gamma *= step_likelihood
        log_gamma += math.log(step_likelihood)
        gammas.append(gamma)
    xi_tilde = np.array([[math.fsum(weights * noises[:, s, j]) for j in range(spec.state_dim)] for s in range(t)])
    return EnumerationResult(
        mean=unroll_noise(spec, actions, xi_tilde, t),
        xi_tilde=xi_tilde,
        gamma=gamma,
        Gamma=gamma * xi_tilde,
        gammas=np.array(gammas),
        n_paths=int(weights.shape[0]),
        log_gamma=log_gamma,
    )


def record_likelihoods(spec: SystemSpec, observations, actions,
                       max_paths: int = EnumerationFiniteSupport.max_paths) -> np.ndarray:
    """gamma_1..gamma_t; entries after an impossible observation are 0."""
    _check_applicable(EnumerationFiniteSupport(), spec)
    observations, actions, t = _record(spec, observations, actions)
    gammas = np.zeros(t)
    gamma = 1.0
    for s, weights, _, _, step_likelihood in _enumerate(spec, observations, actions, max_paths):
        if weights.shape[0] == 0:
            break
        gamma *= step_likelihood
        gammas[s] = gamma
    return gammas


# --------------------------------------------------------------------------
# Lattice forward filtering
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LatticeResult:
    mean: np.ndarray
    gamma: float
    support_size: int
    log_gamma: float


def lattice_posterior_mean(spec: SystemSpec, observations, actions,
                           max_support: int = LatticeForward.max_support) -> LatticeResult:
    """
    Exact posterior mean by forward filtering over the noise component of the state.

    The state splits into x_t = z_t + c_t with c_t driven by x0 and the
    actions only, and z_{t+1} = A_t z_t + xi_t. Paths reaching the same z_t
    are merged, which keeps the support small whenever A_t and the atoms sit
    on an integer lattice.
    Weights are renormalized every step, so only gamma itself can underflow.

    Raises:
        EnumerationBudgetExceeded: merged support exceeds max_support
        ImpossibleObservation: gamma_t = 0
    """
    _check_applicable(LatticeForward(), spec)
    observations, actions, t = _record(spec, observations, actions)
    support = np.zeros((1, spec.state_dim))
    weights = np.ones(1)
    gamma, log_gamma = 1.0, 0.0
    offset = spec.x0.copy()
    for s in range(t):
        mu = spec.transition_noise_seq[s]
        K = mu.support_size
        offset = apply_matrix(spec.A_seq[s], offset) + apply_matrix(spec.B_seq[s], actions[s])
        candidates = np.repeat(apply_matrix(spec.A_seq[s], support), K, axis=0) + np.tile(mu.points, (support.shape[0], 1))
        masses = np.repeat(weights, K) * np.tile(mu.masses, support.shape[0])
        support, inverse = np.unique(candidates, axis=0, return_inverse=True)
        weights = np.bincount(inverse.ravel(), weights=masses, minlength=support.shape[0])
        residuals = observations[s] - apply_matrix(spec.C_seq[s], support + offset)
        weights = weights * spec.obs_noise_seq[s].density(residuals)
        keep = weights > 0
        support, weights = support[keep], weights[keep]
        if support.shape[0] == 0:
            raise ImpossibleObservation(s + 1)
        if support.shape[0] > max_support:
            raise EnumerationBudgetExceeded(f"{support.shape[0]} support points at t={s + 1} exceed budget {max_support}")
        step_likelihood = math.fsum(weights)
        weights = weights / step_likelihood
        gamma *= step_likelihood
        log_gamma += math.log(step_likelihood)
    z_mean = np.array([math.fsum(weights * support[:, j]) for j in range(spec.state_dim)])
    return LatticeResult(mean=z_mean + offset, gamma=gamma, support_size=int(support.shape[0]), log_gamma=log_gamma)


# --------------------------------------------------------------------------
# Reference particle filter
# --------------------------------------------------------------------------

def reference_filter_mean(spec: SystemSpec, observations, actions, n_ref: int, key: StreamKey) -> np.ndarray:
    """
    Approximate posterior mean from an n_ref-particle filter on a fixed record.

    This is a surrogate, not an exact oracle; its own Monte Carlo error is
    not bounded here.
    """
    observations, actions, t = _record(spec, observations, actions)
    ens = init_ensemble(spec, n_ref, keep_history=False)
    for s in range(t):
        ens = pf_step(ens, spec, actions[s], observations[s], key)
    return estimate_state(ens)


# --------------------------------------------------------------------------
# Closed-loop adapter
# --------------------------------------------------------------------------

def make_estimator(kind, spec: SystemSpec, key: Optional[StreamKey] = None) -> Callable:
    """
    Estimator (observations, actions) -> y_tilde_t for the ideal planner.

    With an empty record the estimate is x0, which is known exactly.
    """
    _check_applicable(kind, spec)

    def estimate(observations, actions) -> np.ndarray:
        if len(observations) == 0:
            return spec.x0.copy()
        if isinstance(kind, KalmanGaussian):
            return kalman_posterior_mean(spec, observations, actions).mean
        if isinstance(kind, EnumerationFiniteSupport):
            return enumerate_posterior_mean(spec, observations, actions, kind.max_paths).mean
        if isinstance(kind, LatticeForward):
            return lattice_posterior_mean(spec, observations, actions, kind.max_support).mean
        if key is None:
            raise ValueError("reference filter oracle needs a stream key")
        return reference_filter_mean(spec, observations, actions, kind.n_ref, key)

    return estimate


def oracle_from_name(name: str, max_paths: Optional[int] = None, max_support: Optional[int] = None,
                     n_ref: Optional[int] = None):
    """Oracle kind from its config name (kalman | enumeration | lattice | reference)."""
    if name == "kalman":
        return KalmanGaussian()
    if name == "enumeration":
        return EnumerationFiniteSupport(max_paths=max_paths or EnumerationFiniteSupport.max_paths)
    if name == "lattice":
        return LatticeForward(max_support=max_support or LatticeForward.max_support)
    if name == "reference":
        return ReferenceFilter(n_ref=n_ref or ReferenceFilter.n_ref)
    raise ValueError(f"unknown oracle kind '{name}' (kalman | enumeration | lattice | reference)")
