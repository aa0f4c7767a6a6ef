"""
The hard instance on which particle filtering needs 1/p particles.

A scalar random walk with +-1 steps observed without noise: only particles
that drew +1 at every step match the record o_t = t, so each particle
survives with probability p = 2^-T. Weights on this instance are exactly
0 or 1, so no rounding enters the death statistics.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from functools import partial
from typing import Optional

import numpy as np
from tqdm import tqdm

from .errors import SpecError
from .model import Environment, LinearPolicy, SystemSpec, time_invariant_spec, validate_spec
from .noise import point_mass, uniform_atoms
from .pf import run_pf_planner
from .streams import StreamKey

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LowerBoundInstance:
    """
    Args:
        horizon (int): T
        spec (SystemSpec): d = 1, x0 = 0, A = 1, B = 0, xi = +-1, C = 1, zeta = 0
        observations (array (T, 1)): the conditioned record o_t = t
        p (Fraction): probability of that record, 2^-T
    """

    horizon: int
    spec: SystemSpec
    observations: np.ndarray
    p: Fraction

    @property
    def forced_transition_noises(self) -> np.ndarray:
        """Environment noise realizing the conditioned record: +1 at every step."""
        return np.ones((self.horizon, 1))

    @property
    def forced_observation_noises(self) -> np.ndarray:
        return np.zeros((self.horizon, 1))


def build_lowerbound_process(T: int) -> LowerBoundInstance:
    """
    Build the hard instance with horizon T.

    Raises:
        SpecError: T < 1
    """
    if T < 1:
        raise SpecError(f"lower-bound instance needs T >= 1, got {T}")
    spec = time_invariant_spec(
        A=1.0, B=0.0, C=1.0,
        transition_noise=uniform_atoms([-1.0, 1.0], subgaussian_m=1.0),
        obs_noise=point_mass([0.0]),
        horizon=T,
        x0=[0.0],
    )
    problems = validate_spec(spec)
    if problems:
        raise SpecError("; ".join(problems))
    observations = np.arange(1, T + 1, dtype=np.float64).reshape(T, 1)
    return LowerBoundInstance(horizon=T, spec=spec, observations=observations, p=Fraction(1, 2 ** T))


def survival_probability_exact(T: int, N: int, p: Optional[Fraction] = None) -> float:
    """
    1 - (1 - p)^N: probability that at least one of N particles survives.

    p defaults to 2^-T; the power is taken in exact rational arithmetic.
    """
    if N <= 0:
        return 0.0
    p = Fraction(1, 2 ** T) if p is None else Fraction(p)
    return float(1 - (1 - p) ** N)


def max_particles_for_death_bound(T: int, k: float) -> int:
    """Largest N with N <= 1 / (2 k p), p = 2^-T."""
    if k <= 0:
        raise SpecError(f"k must be positive, got {k}")
    return math.floor(Fraction(2 ** T) / (2 * Fraction(k)))


@dataclass(frozen=True)
class DeathReport:
    """Survival statistics of one (T, N) cell."""

    T: int
    N: int
    k: float
    replications: int
    survivals: int
    empirical: float
    exact: float
    sigma: float
    within_3_sigma: bool
    bound_1_over_k: float
    bound_applies: bool
    survivor_paths_ok: bool

    @property
    def passed(self) -> bool:
        under_bound = self.empirical <= self.bound_1_over_k if self.bound_applies else True
        return self.within_3_sigma and under_bound and self.survivor_paths_ok


def _replicate(instance: LowerBoundInstance, n_particles: int, key: StreamKey, r: int):
    """(survived, survivors sit on x_t = t) for replication r."""
    env = Environment(instance.spec, instance.forced_transition_noises, instance.forced_observation_noises)
    result = run_pf_planner(instance.spec, LinearPolicy(np.zeros((1, 1))), n_particles, key.child(r), env,
                            keep_history=True)
    if result.died:
        return False, True
    ens = result.ensemble
    alive = np.isfinite(ens.log_weights)
    history = ens.history_array()[:, alive, 0]
    paths_ok = bool(np.all(history == 1.0) and np.all(ens.states[alive, 0] == instance.horizon)
                    and np.all(ens.log_weights[alive] == 0.0))
    return True, paths_ok


def run_death_experiment(T: int, N: int, replications: int, key: StreamKey, k: float = 2,
                         jobs: int = 1, progress: bool = False) -> DeathReport:
    """
    Run the planner on the conditioned record `replications` times and count survivals.

    The environment noise is forced to +1 everywhere, so every run sees
    o_t = t. A replication survives when some particle is alive at T.

    Args:
        T (int): horizon
        N (int): particles per replication
        replications (int): independent particle draws
        key (StreamKey): replication r uses key/r
        k (float): the 1/k bound is checked when N <= 1 / (2 k p)
        jobs (int): worker threads

    Returns:
        DeathReport: empirical vs exact survival and the bound verdict
    """
    instance = build_lowerbound_process(T)
    work = partial(_replicate, instance, N, key)
    survivals = 0
    paths_ok = True
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        outcomes = pool.map(work, range(replications))
        for survived, ok in tqdm(outcomes, total=replications, desc=f"🚀 lowerbound T={T} N={N}",
                                 disable=not progress, leave=False):
            survivals += int(survived)
            paths_ok = paths_ok and ok

    exact = survival_probability_exact(T, N, instance.p)
    empirical = survivals / replications
    sigma = math.sqrt(exact * (1.0 - exact) / replications)
    # a zero-variance cell must match exactly
    within = abs(empirical - exact) <= 3.0 * sigma if sigma > 0 else empirical == exact
    report = DeathReport(
        T=T,
        N=N,
        k=k,
        replications=replications,
        survivals=survivals,
        empirical=empirical,
        exact=exact,
        sigma=sigma,
        within_3_sigma=within,
        bound_1_over_k=1.0 / k,
        bound_applies=N <= max_particles_for_death_bound(T, k),
        survivor_paths_ok=paths_ok,
    )
    status = "✅" if report.passed else "❌"
    logger.info(f"{status} lowerbound T={T} N={N}: empirical {empirical:.5f} vs exact {exact:.5f}")
    return report


__all__ = [
    "DeathReport",
    "LowerBoundInstance",
    "build_lowerbound_process",
    "run_death_experiment",
    "survival_probability_exact",
    "max_particles_for_death_bound",
]
