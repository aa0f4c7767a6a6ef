"""
Approximate vs ideal process on shared noise.

Both closed loops consume the same xi_0..xi_{T-1} and zeta_1..zeta_T; the
approximate loop acts on particle estimates, the ideal loop on oracle
estimates. Their reward difference isolates the inference error.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .errors import ParticlePlanningError
from .model import Environment, SystemSpec, Trajectory, draw_noise_path, evaluate_reward
from .oracle import make_estimator
from .pf import DEFAULT_HISTORY_LIMIT, ParticleEnsemble, run_pf_planner
from .streams import ROLE_ORACLE, ROLE_PARTICLES, ROLE_SHARED, ROLE_SWEEP, StreamKey

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class CoupledRun:
    """
    One coupled pair of runs.

    reward_approx and reward_gap are None when the particle run died.
    """

    spec: SystemSpec
    transition_noises: np.ndarray
    observation_noises: np.ndarray
    approx: Trajectory
    ideal: Trajectory
    estimates_approx: List[np.ndarray]
    estimates_ideal: List[np.ndarray]
    reward_approx: Optional[float]
    reward_ideal: float
    reward_gap: Optional[float]
    death_time: Optional[int] = None
    ess: List[float] = field(default_factory=list)
    approx_ensembles: List[ParticleEnsemble] = field(default_factory=list)


def draw_shared_noise(spec: SystemSpec, key: StreamKey) -> Tuple[np.ndarray, np.ndarray]:
    """The one noise realization both processes consume."""
    return draw_noise_path(spec, key)


def run_ideal_planner(spec: SystemSpec, policy, oracle_kind, key: StreamKey, environment: Environment):
    """Closed loop acting on the oracle estimate; the oracle is rerun from scratch each step."""
    estimator = make_estimator(oracle_kind, spec, key)
    estimates = []
    observations, actions = [], []
    for _ in range(spec.horizon):
        y_tilde = estimator(np.array(observations).reshape(-1, spec.obs_dim),
                            np.array(actions).reshape(-1, spec.action_dim))
        estimates.append(y_tilde)
        action = policy(y_tilde)
        observations.append(environment.step(action))
        actions.append(action)
    return environment.trajectory(), estimates


def run_coupled(spec: SystemSpec, policy, reward, n_particles: int, oracle_kind, key: StreamKey,
                noise_key: Optional[StreamKey] = None, keep_history: Optional[bool] = None,
                keep_ensembles: bool = False, history_limit: int = DEFAULT_HISTORY_LIMIT) -> CoupledRun:
    """
    Draw xi, zeta once and run both closed loops against them.

    Particle noise comes from key/particles and is independent of the
    shared realization, which comes from noise_key (default key/shared).

    Args:
        spec (SystemSpec): the system
        policy: callable y -> u
        reward: reward function over (x_1..x_T, u_0..u_{T-1})
        n_particles (int): N
        oracle_kind: oracle for the ideal process
        key (StreamKey): run key
        noise_key (StreamKey, optional): key for the shared realization
        keep_history (bool, optional): keep particle noise history
        keep_ensembles (bool): keep per-step ensembles for noise-space analysis

    Returns:
        CoupledRun: both trajectories, estimates, rewards and the gap
    """
    noise_key = noise_key if noise_key is not None else key.child(ROLE_SHARED)
    xi, zeta = draw_shared_noise(spec, noise_key)

    approx_result = run_pf_planner(
        spec, policy, n_particles, key.child(ROLE_PARTICLES), Environment(spec, xi, zeta),
        keep_history=keep_history, keep_ensembles=keep_ensembles, history_limit=history_limit,
    )
    ideal, estimates_ideal = run_ideal_planner(spec, policy, oracle_kind, key.child(ROLE_ORACLE),
                                               Environment(spec, xi, zeta))
    reward_ideal = evaluate_reward(reward, ideal.states[1:], ideal.actions)

    reward_approx = reward_gap = None
    if not approx_result.died:
        approx = approx_result.trajectory
        reward_approx = evaluate_reward(reward, approx.states[1:], approx.actions)
        reward_gap = abs(reward_approx - reward_ideal)

    return CoupledRun(
        spec=spec,
        transition_noises=xi,
        observation_noises=zeta,
        approx=approx_result.trajectory,
        ideal=ideal,
        estimates_approx=approx_result.estimates,
        estimates_ideal=estimates_ideal,
        reward_approx=reward_approx,
        reward_ideal=reward_ideal,
        reward_gap=reward_gap,
        death_time=approx_result.death_time,
        ess=approx_result.ess,
        approx_ensembles=approx_result.ensembles,
    )


@dataclass(frozen=True)
class SweepRow:
    """One (N, seed) cell of a sweep; missing values are None."""

    run_id: int
    n_particles: int
    seed: int
    horizon: int
    reward_gap: Optional[float]
    reward_approx: Optional[float]
    reward_ideal: Optional[float]
    died_at: Optional[int]
    wall_time_ms: float
    error: Optional[str] = None


def cell_keys(master: StreamKey, n_index: int, seed_index: int) -> Tuple[StreamKey, StreamKey]:
    """
    (run key, shared-noise key) for one sweep cell.

    The run key depends on (N index, seed index); the shared realization
    depends on the seed index only, so every N sees the same noise per seed.
    """
    return master.child(ROLE_SWEEP, n_index, seed_index), master.child(ROLE_SHARED, seed_index)


def _run_cell(spec, policy, reward, oracle_kind, master, history_limit, cell) -> SweepRow:
    run_id, n_index, n_particles, seed_index = cell
    run_key, noise_key = cell_keys(master, n_index, seed_index)
    started = time.perf_counter()
    try:
        run = run_coupled(spec, policy, reward, n_particles, oracle_kind, run_key, noise_key=noise_key,
                          keep_history=False, history_limit=history_limit)
    except ParticlePlanningError as exc:
        logger.warning(f"⚠️ sweep cell N={n_particles} seed={seed_index} failed: {exc}")
        return SweepRow(run_id, n_particles, seed_index, spec.horizon, None, None, None, None,
                        (time.perf_counter() - started) * 1000.0, error=str(exc))
    return SweepRow(
        run_id=run_id,
        n_particles=n_particles,
        seed=seed_index,
        horizon=spec.horizon,
        reward_gap=run.reward_gap,
        reward_approx=run.reward_approx,
        reward_ideal=run.reward_ideal,
        died_at=run.death_time,
        wall_time_ms=(time.perf_counter() - started) * 1000.0,
    )


def gap_sweep(spec: SystemSpec, policy, reward, n_list: Sequence[int], seeds: int, oracle_kind,
              master: StreamKey, jobs: int = 1, progress: bool = False,
              history_limit: int = DEFAULT_HISTORY_LIMIT, run_id_offset: int = 0) -> List[SweepRow]:
    """
    Full factorial sweep over particle counts and seeds.

    Cells run in parallel up to `jobs` threads; rows come back in (N, seed)
    order and failed cells are recorded, not raised.

    Returns:
        List[SweepRow]: one row per cell
    """
    cells = [(run_id_offset + i * seeds + s, i, n, s) for i, n in enumerate(n_list) for s in range(seeds)]
    work = partial(_run_cell, spec, policy, reward, oracle_kind, master, history_limit)
    bar = tqdm(total=len(cells), desc=f"🚀 sweep T={spec.horizon}", unit="run", disable=not progress, leave=False)
    rows = []
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for row in pool.map(work, cells):
            rows.append(row)
            bar.update(1)
    bar.close()
    died = sum(1 for r in rows if r.died_at is not None)
    logger.info(f"📊 sweep T={spec.horizon}: {len(rows)} runs, {died} particle deaths")
    return rows


def _standard_error(values: np.ndarray) -> float:
    if values.size == 0:
        return math.nan
    if values.size == 1:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


def summarize_rows(rows: Sequence[SweepRow], value: str = "reward_gap"):
    """
    Mean, std, median and standard error of `value` per (N, T), ignoring missing entries.

    `std` is the spread across seeds; `sem` (sample std over sqrt(count)) is the
    interval reported around the mean.

    Returns:
        List[dict]: one dict per (N, T) in first-seen order
    """
    groups = {}
    for row in rows:
        groups.setdefault((row.n_particles, row.horizon), []).append(row)
    summary = []
    for (n, horizon), members in groups.items():
        values = np.array([getattr(r, value) for r in members if getattr(r, value) is not None], dtype=np.float64)
        summary.append({
            "N": n,
            "T": horizon,
            "runs": len(members),
            "deaths": sum(1 for r in members if r.died_at is not None),
            "mean": float(np.mean(values)) if values.size else math.nan,
            "std": float(np.std(values)) if values.size else math.nan,
            "median": float(np.median(values)) if values.size else math.nan,
            "sem": _standard_error(values),
        })
    return summary
