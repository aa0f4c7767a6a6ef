"""
Particle filtering for sequential planning.

Particles share the actions actually taken, draw their own transition
noise, and are weighted by the observation likelihood. There is no
resampling: when every weight reaches zero the run is reported dead.
Weights are kept in log space.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import NoiseHistoryDisabled, ParticleDeath, SpecError
from .model import Environment, SystemSpec, Trajectory, apply_matrix
from .streams import StreamKey, chunked_draws

logger = logging.getLogger(__name__)

# Retained noise entries (d * N * T) above which history is off by default.
DEFAULT_HISTORY_LIMIT = 10_000_000


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """
    N particles at time t.

    Args:
        states (array (N, d)): particle states x_t^(i)
        log_weights (array (N,)): log w_t^(i); -inf marks a zero weight
        t (int): current time index
        noise_history (tuple of arrays (N, d), optional): xi_s^(i) for s < t, or None when disabled
    """

    states: np.ndarray
    log_weights: np.ndarray
    t: int
    noise_history: Optional[Tuple[np.ndarray, ...]] = ()

    @property
    def count(self) -> int:
        return int(self.states.shape[0])

    @property
    def keeps_history(self) -> bool:
        return self.noise_history is not None

    @property
    def alive(self) -> bool:
        return bool(np.any(np.isfinite(self.log_weights)))

    def history_array(self) -> np.ndarray:
        """Noise history as an array (t, N, d)."""
        if self.noise_history is None:
            raise NoiseHistoryDisabled("ensemble was created without noise history")
        if not self.noise_history:
            return np.zeros((0, self.count, self.states.shape[1]))
        return np.stack(self.noise_history)


def _default_history(spec: SystemSpec, n_particles: int, history_limit: int) -> bool:
    return spec.state_dim * n_particles * spec.horizon <= history_limit


def init_ensemble(spec: SystemSpec, n_particles: int, keep_history: Optional[bool] = None,
                  history_limit: int = DEFAULT_HISTORY_LIMIT) -> ParticleEnsemble:
    """
    All particles at x0 with weight 1 (log-weight 0).

    Args:
        spec (SystemSpec): the system
        n_particles (int): N >= 1
        keep_history (bool, optional): retain per-particle noise; default depends on d*N*T
        history_limit (int): threshold for the default

    Returns:
        ParticleEnsemble: ensemble at t = 0
    """
    if n_particles < 1:
        raise SpecError(f"need at least one particle, got N={n_particles}")
    if keep_history is None:
        keep_history = _default_history(spec, n_particles, history_limit)
    states = np.repeat(spec.x0[None, :], n_particles, axis=0)
    return ParticleEnsemble(
        states=states,
        log_weights=np.zeros(n_particles),
        t=0,
        noise_history=() if keep_history else None,
    )


def _shifted_weights(ens: ParticleEnsemble) -> np.ndarray:
    """exp(log w - max log w); raises ParticleDeath when every weight is zero."""
    finite = np.isfinite(ens.log_weights)
    if not np.any(finite):
        raise ParticleDeath(ens.t)
    top = np.max(ens.log_weights[finite])
    return np.exp(ens.log_weights - top)


def normalized_weights(ens: ParticleEnsemble) -> np.ndarray:
    w = _shifted_weights(ens)
    return w / math.fsum(w)


def weighted_average(ens: ParticleEnsemble, values: np.ndarray) -> np.ndarray:
    """
    sum_i w_i v_i / sum_i w_i over axis 0 of `values` (N, ...).

    Accumulation is compensated and runs in ascending particle order.
    """
    w = _shifted_weights(ens)
    total = math.fsum(w)
    flat = values.reshape(values.shape[0], -1)
    numerators = [math.fsum(w * flat[:, j]) for j in range(flat.shape[1])]
    return (np.array(numerators) / total).reshape(values.shape[1:])


def estimate_state(ens: ParticleEnsemble) -> np.ndarray:
    """Weighted particle mean y_hat_t."""
    return weighted_average(ens, ens.states)


def effective_sample_size(ens: ParticleEnsemble) -> float:
    """(sum w)^2 / sum w^2; 0 for a dead ensemble. Diagnostic only."""
    try:
        w = _shifted_weights(ens)
    except ParticleDeath:
        return 0.0
    return math.fsum(w) ** 2 / math.fsum(w * w)


def pf_step(ens: ParticleEnsemble, spec: SystemSpec, action, observation, key: StreamKey) -> ParticleEnsemble:
    """
    Advance every particle one step with the shared action and reweight on o_{t+1}.

    Particle i at step t draws from stream key/(t, i // PARTICLE_CHUNK).

    Args:
        ens (ParticleEnsemble): ensemble at time t < T
        spec (SystemSpec): the system
        action (array (k,)): action u_t actually taken
        observation (array (obs_dim,)): o_{t+1}
        key (StreamKey): particle stream root for this run

    Returns:
        ParticleEnsemble: ensemble at time t + 1
    """
    t = ens.t
    if t >= spec.horizon:
        raise SpecError(f"ensemble already at the horizon T={spec.horizon}")
    action = np.atleast_1d(np.asarray(action, dtype=np.float64))
    observation = np.atleast_1d(np.asarray(observation, dtype=np.float64))
    if action.shape != (spec.action_dim,):
        raise SpecError(f"action has shape {action.shape}, expected ({spec.action_dim},)")
    if observation.shape != (spec.obs_dim,):
        raise SpecError(f"observation has shape {observation.shape}, expected ({spec.obs_dim},)")

    mu = spec.transition_noise_seq[t]
    xi = chunked_draws(mu.sample, key.child(t), ens.count).reshape(ens.count, spec.state_dim)
    states = apply_matrix(spec.A_seq[t], ens.states) + apply_matrix(spec.B_seq[t], action) + xi
    residuals = observation - apply_matrix(spec.C_seq[t], states)
    increments = spec.obs_noise_seq[t].log_density(residuals)
    log_weights = ens.log_weights + increments
    if np.any(np.isnan(log_weights)):
        raise SpecError(f"log-weights became NaN at t={t + 1}")

    history = None if ens.noise_history is None else ens.noise_history + (xi,)
    return ParticleEnsemble(states=states, log_weights=log_weights, t=t + 1, noise_history=history)


@dataclass(eq=False)
class PlannerResult:
    """Outcome of one closed-loop particle filtering run."""

    trajectory: Trajectory
    estimates: List[np.ndarray]
    ensemble: ParticleEnsemble
    death_time: Optional[int] = None
    ess: List[float] = field(default_factory=list)
    ensembles: List[ParticleEnsemble] = field(default_factory=list)

    @property
    def died(self) -> bool:
        return self.death_time is not None


def run_pf_planner(spec: SystemSpec, policy, n_particles: int, key: StreamKey, environment: Environment,
                   keep_history: Optional[bool] = None, keep_ensembles: bool = False,
                   history_limit: int = DEFAULT_HISTORY_LIMIT) -> PlannerResult:
    """
    Closed loop: estimate y_hat_t, act u_t = g(y_hat_t), observe, reweight.

    The run halts at the first step where every weight is zero and records
    that time as death_time. A run whose weights all vanish only at T is
    complete but still reported dead at T.

    Args:
        spec (SystemSpec): the system
        policy: callable y -> u
        n_particles (int): N
        key (StreamKey): particle stream root
        environment (Environment): ground truth at t = 0
        keep_history (bool, optional): retain noise history
        keep_ensembles (bool): keep the ensemble of every step (for noise-space analysis)
        history_limit (int): default-history threshold

    Returns:
        PlannerResult: trajectory, estimates, final ensemble, death time
    """
    ens = init_ensemble(spec, n_particles, keep_history=keep_history, history_limit=history_limit)
    estimates, ess, ensembles = [], [], []
    death_time = None
    for t in range(spec.horizon):
        if keep_ensembles:
            ensembles.append(ens)
        try:
            y_hat = estimate_state(ens)
        except ParticleDeath:
            death_time = t
            break
        estimates.append(y_hat)
        ess.append(effective_sample_size(ens))
        action = policy(y_hat)
        observation = environment.step(action)
        ens = pf_step(ens, spec, action, observation, key)
        logger.debug(f"t={t + 1} ess={ess[-1]:.2f}")
    else:
        if keep_ensembles:
            ensembles.append(ens)
        if not ens.alive:
            death_time = spec.horizon

    if death_time is not None:
        logger.debug(f"particle death at t={death_time} with N={n_particles}")
    return PlannerResult(
        trajectory=environment.trajectory(),
        estimates=estimates,
        ensemble=ens,
        death_time=death_time,
        ess=ess,
        ensembles=ensembles,
    )
