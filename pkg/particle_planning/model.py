"""
Partially observed linear dynamical systems.

Holds the system description (time-indexed A_t, B_t, C_t and noise laws),
policies, reward functions, trajectories and the ground-truth environment.
Index conventions: A_seq[t], B_seq[t] and transition_noise_seq[t] drive
the step t -> t+1 for t = 0..T-1; C_seq[t-1] and obs_noise_seq[t-1] produce
the observation o_t for t = 1..T.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import SpecError
from .noise import NoiseDistribution
from .streams import ROLE_OBSERVATION, ROLE_TRANSITION, StreamKey

logger = logging.getLogger(__name__)


def apply_matrix(matrix: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """
    matrix @ v for one vector or each row of a stack.

    Every state update in the package goes through this so the environment,
    the particles and the replay helpers round identically.
    """
    return np.einsum("ij,...j->...i", matrix, vectors)


def operator_norm(matrix: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(matrix, dtype=np.float64), ord=2))


def _frozen_array(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """
    Time-varying linear system x_{t+1} = A_t x_t + B_t u_t + xi_t, o_t = C_t x_t + zeta_t.

    The constructor only freezes the arrays; call validate_spec() for a
    report of dimension and length problems.
    """

    state_dim: int
    action_dim: int
    obs_dim: int
    horizon: int
    A_seq: Tuple[np.ndarray, ...]
    B_seq: Tuple[np.ndarray, ...]
    C_seq: Tuple[np.ndarray, ...]
    transition_noise_seq: Tuple[NoiseDistribution, ...]
    obs_noise_seq: Tuple[NoiseDistribution, ...]
    x0: np.ndarray

    def __post_init__(self):
        for name in ("A_seq", "B_seq", "C_seq"):
            object.__setattr__(self, name, tuple(_frozen_array(m) for m in getattr(self, name)))
        for name in ("transition_noise_seq", "obs_noise_seq"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "x0", _frozen_array(np.atleast_1d(self.x0)))

    @property
    def atomic_observations(self) -> bool:
        return all(eta.is_atomic for eta in self.obs_noise_seq)

    def with_noise(self, transition_noise_seq=None, obs_noise_seq=None) -> "SystemSpec":
        """Copy of this spec with one or both noise sequences replaced."""
        return SystemSpec(
            self.state_dim, self.action_dim, self.obs_dim, self.horizon,
            self.A_seq, self.B_seq, self.C_seq,
            transition_noise_seq if transition_noise_seq is not None else self.transition_noise_seq,
            obs_noise_seq if obs_noise_seq is not None else self.obs_noise_seq,
            self.x0,
        )


def time_invariant_spec(A, B, C, transition_noise: NoiseDistribution, obs_noise: NoiseDistribution,
                        horizon: int, x0=None) -> SystemSpec:
    """
    Build a SystemSpec by repeating one (A, B, C, mu, eta) tuple `horizon` times.

    Scalars are promoted to 1x1 matrices.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    state_dim, action_dim, obs_dim = A.shape[0], B.shape[1], C.shape[0]
    x0 = np.zeros(state_dim) if x0 is None else x0
    return SystemSpec(
        state_dim=state_dim,
        action_dim=action_dim,
        obs_dim=obs_dim,
        horizon=horizon,
        A_seq=(A,) * horizon,
        B_seq=(B,) * horizon,
        C_seq=(C,) * horizon,
        transition_noise_seq=(transition_noise,) * horizon,
        obs_noise_seq=(obs_noise,) * horizon,
        x0=x0,
    )


def validate_spec(spec: SystemSpec) -> List[str]:
    """
    Collect every dimension, length and finiteness problem in a spec.

    Returns:
        List[str]: human readable violations; empty means valid
    """
    violations = []
    d, k, m, T = spec.state_dim, spec.action_dim, spec.obs_dim, spec.horizon
    for name, value in (("state_dim", d), ("action_dim", k), ("obs_dim", m), ("horizon", T)):
        if not isinstance(value, (int, np.integer)) or value < 1:
            violations.append(f"{name}: expected a positive integer, got {value!r}")
    if violations:
        return violations

    expected_shapes = {"A": (d, d), "B": (d, k), "C": (m, d)}
    for letter, shape in expected_shapes.items():
        seq = getattr(spec, f"{letter}_seq")
        if len(seq) != T:
            violations.append(f"{letter}_seq length: expected {T}, got {len(seq)}")
        offset = 1 if letter == "C" else 0
        for i, matrix in enumerate(seq):
            label = f"{letter}_{i + offset}"
            if matrix.shape != shape:
                violations.append(f"{label} shape: expected {shape}, got {matrix.shape}")
            elif not np.all(np.isfinite(matrix)):
                violations.append(f"{label} entries: non-finite values")

    for name, seq, dim in (("transition_noise_seq", spec.transition_noise_seq, d),
                           ("obs_noise_seq", spec.obs_noise_seq, m)):
        if len(seq) != T:
            violations.append(f"{name} length: expected {T}, got {len(seq)}")
        for i, dist in enumerate(seq):
            if not isinstance(dist, NoiseDistribution):
                violations.append(f"{name}[{i}]: not a noise distribution")
            elif dist.dim != dim:
                violations.append(f"{name}[{i}] dimension: expected {dim}, got {dist.dim}")

    if spec.x0.shape != (d,):
        violations.append(f"x0 shape: expected ({d},), got {spec.x0.shape}")
    elif not np.all(np.isfinite(spec.x0)):
        violations.append("x0 entries: non-finite values")
    return violations


def _vector(value, dim: int, what: str) -> np.ndarray:
    vec = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if vec.shape != (dim,):
        raise SpecError(f"{what} has shape {vec.shape}, expected ({dim},)")
    return vec


def step_state(spec: SystemSpec, t: int, x, u, xi) -> np.ndarray:
    """x_{t+1} = A_t x + B_t u + xi for 0 <= t < T."""
    if not 0 <= t < spec.horizon:
        raise SpecError(f"transition index t={t} outside [0, {spec.horizon})")
    x = _vector(x, spec.state_dim, "state")
    u = _vector(u, spec.action_dim, "action")
    xi = _vector(xi, spec.state_dim, "transition noise")
    return apply_matrix(spec.A_seq[t], x) + apply_matrix(spec.B_seq[t], u) + xi


def observe(spec: SystemSpec, t: int, x, zeta) -> np.ndarray:
    """o_t = C_t x + zeta for 1 <= t <= T."""
    if not 1 <= t <= spec.horizon:
        raise SpecError(f"observation index t={t} outside [1, {spec.horizon}]")
    x = _vector(x, spec.state_dim, "state")
    zeta = _vector(zeta, spec.obs_dim, "observation noise")
    return apply_matrix(spec.C_seq[t - 1], x) + zeta


def unroll_noise(spec: SystemSpec, actions, noises, t: int) -> np.ndarray:
    """
    x_t written directly in terms of x0, the actions and the noises:

        x_t = sum_s (A_{t-1} ... A_{s+1}) (xi_s + B_s u_s) + (A_{t-1} ... A_0) x0

    Shared by the state decomposition check and by the noise-space
    estimators that rebuild a state estimate from per-step noise means.
    """
    if not 0 <= t <= spec.horizon:
        raise SpecError(f"t={t} outside [0, {spec.horizon}]")
    actions = np.asarray(actions, dtype=np.float64).reshape(-1, spec.action_dim)
    noises = np.asarray(noises, dtype=np.float64).reshape(-1, spec.state_dim)
    if actions.shape[0] < t or noises.shape[0] < t:
        raise SpecError(f"need {t} actions and noises, got {actions.shape[0]} and {noises.shape[0]}")
    total = np.zeros(spec.state_dim)
    transfer = np.eye(spec.state_dim)
    for s in range(t - 1, -1, -1):
        total = total + transfer @ (noises[s] + apply_matrix(spec.B_seq[s], actions[s]))
        transfer = transfer @ spec.A_seq[s]
    return total + transfer @ spec.x0


# --------------------------------------------------------------------------
# Policies
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearPolicy:
    """
    u = G y.

    Args:
        G (array k x d): gain matrix
        lipschitz (float, optional): declared L_g; defaults to ||G||_op
    """

    G: np.ndarray
    lipschitz: Optional[float] = None

    def __post_init__(self):
        G = _frozen_array(np.atleast_2d(self.G))
        if not np.all(np.isfinite(G)):
            raise SpecError("policy gain must be finite")
        norm = operator_norm(G)
        declared = norm if self.lipschitz is None else float(self.lipschitz)
        if norm > declared * (1 + 1e-12):
            raise SpecError(f"||G||_op = {norm:.6g} exceeds declared L_g = {declared:.6g}")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "lipschitz", declared)

    @property
    def action_dim(self) -> int:
        return int(self.G.shape[0])

    def __call__(self, y) -> np.ndarray:
        return apply_matrix(self.G, np.asarray(y, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class LipschitzPolicy:
    """
    Arbitrary policy g with a caller-asserted Lipschitz constant.

    Args:
        fn (Callable): maps a state estimate (d,) to an action (k,)
        lipschitz (float): declared L_g > 0
        action_dim (int): k
    """

    fn: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    action_dim: int

    def __post_init__(self):
        if not self.lipschitz > 0:
            raise SpecError(f"declared L_g must be positive, got {self.lipschitz}")

    def __call__(self, y) -> np.ndarray:
        out = np.atleast_1d(np.asarray(self.fn(np.asarray(y, dtype=np.float64)), dtype=np.float64))
        if out.shape != (self.action_dim,):
            raise SpecError(f"policy returned shape {out.shape}, expected ({self.action_dim},)")
        return out


def policy_lipschitz_check(policy, state_dim: int, pairs: int = 1000,
                           rng: Optional[np.random.Generator] = None, scale: float = 10.0) -> float:
    """
    Largest ||g(y) - g(y')|| / (L_g ||y - y'||) over random pairs; <= 1 means consistent.
    """
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(1))
    worst = 0.0
    for _ in range(pairs):
        y, y2 = rng.normal(scale=scale, size=(2, state_dim))
        gap = np.linalg.norm(y - y2)
        if gap == 0:
            continue
        worst = max(worst, float(np.linalg.norm(policy(y) - policy(y2)) / (policy.lipschitz * gap)))
    return worst


# --------------------------------------------------------------------------
# Rewards
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AvgL1Reward:
    """Average l1 norm of the states x_1..x_T; actions are ignored. L_r = sqrt(d)/T."""

    state_dim: int
    horizon: int

    @property
    def lipschitz(self) -> float:
        return math.sqrt(self.state_dim) / self.horizon

    def __call__(self, states: np.ndarray, actions: np.ndarray) -> float:
        return math.fsum(np.abs(states).ravel()) / states.shape[0]


@dataclass(frozen=True)
class SumNormReward:
    """L_r * (sum ||x_t|| + sum ||u_t||)."""

    lipschitz: float = 1.0

    def __call__(self, states: np.ndarray, actions: np.ndarray) -> float:
        norms = list(np.linalg.norm(states, axis=1)) + list(np.linalg.norm(actions, axis=1))
        return self.lipschitz * math.fsum(norms)


@dataclass(frozen=True, eq=False)
class CustomReward:
    """Caller supplied reward r(states, actions) with declared L_r."""

    fn: Callable[[np.ndarray, np.ndarray], float]
    lipschitz: float

    def __post_init__(self):
        if not self.lipschitz > 0:
            raise SpecError(f"declared L_r must be positive, got {self.lipschitz}")

    def __call__(self, states: np.ndarray, actions: np.ndarray) -> float:
        return float(self.fn(states, actions))


def evaluate_reward(reward, states, actions) -> float:
    """
    Reward of a run from its states x_1..x_T and actions u_0..u_{T-1}.

    Raises:
        SpecError: when the two sequences have different lengths
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    if states.shape[0] != actions.shape[0]:
        raise SpecError(f"reward needs equal lengths, got {states.shape[0]} states and {actions.shape[0]} actions")
    return float(reward(states, actions))


def reward_lipschitz_check(reward, horizon: int, state_dim: int, action_dim: int, pairs: int = 1000,
                           rng: Optional[np.random.Generator] = None) -> float:
    """
    Largest |r(x,u) - r(x',u')| / (L_r (sum ||x_t - x'_t|| + sum ||u_t - u'_t||)) over random pairs.
    """
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(2))
    worst = 0.0
    for _ in range(pairs):
        x, x2 = rng.normal(scale=5.0, size=(2, horizon, state_dim))
        u, u2 = rng.normal(scale=5.0, size=(2, horizon, action_dim))
        distance = math.fsum(np.linalg.norm(x - x2, axis=1)) + math.fsum(np.linalg.norm(u - u2, axis=1))
        if distance == 0:
            continue
        gap = abs(evaluate_reward(reward, x, u) - evaluate_reward(reward, x2, u2))
        worst = max(worst, gap / (reward.lipschitz * distance))
    return worst


# --------------------------------------------------------------------------
# Trajectories and the ground-truth environment
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    One realized run. Arrays are indexed from their first time step:
    states[t] = x_t (t = 0..), actions[t] = u_t, observations[t-1] = o_t,
    transition_noises[t] = xi_t, observation_noises[t-1] = zeta_t.
    """

    states: np.ndarray
    actions: np.ndarray
    observations: np.ndarray
    transition_noises: np.ndarray
    observation_noises: np.ndarray

    @property
    def steps(self) -> int:
        return int(self.actions.shape[0])


def replay_states(spec: SystemSpec, actions, noises) -> np.ndarray:
    """Re-run step_state from x0; returns x_0..x_n."""
    states = [spec.x0.copy()]
    for t, (u, xi) in enumerate(zip(actions, noises)):
        states.append(step_state(spec, t, states[-1], u, xi))
    return np.array(states)


def replay_observations(spec: SystemSpec, states, obs_noises) -> np.ndarray:
    """Re-run observe on x_1..x_n; returns o_1..o_n."""
    return np.array([observe(spec, t, states[t], zeta) for t, zeta in enumerate(obs_noises, start=1)])


def draw_noise_path(spec: SystemSpec, key: StreamKey) -> Tuple[np.ndarray, np.ndarray]:
    """
    One realization of xi_0..xi_{T-1} and zeta_1..zeta_T.

    Step t reads streams key/(transition, t) and key/(observation, t).
    """
    xi = np.array([spec.transition_noise_seq[t].sample(key.child(ROLE_TRANSITION, t).generator())
                   for t in range(spec.horizon)]).reshape(spec.horizon, spec.state_dim)
    zeta = np.array([spec.obs_noise_seq[t].sample(key.child(ROLE_OBSERVATION, t).generator())
                     for t in range(spec.horizon)]).reshape(spec.horizon, spec.obs_dim)
    return xi, zeta


@dataclass(eq=False)
class Environment:
    """
    Ground-truth system driven by a fixed noise realization.

    The hidden state only advances through step(); the caller sees the
    observations it returns.
    """

    spec: SystemSpec
    transition_noises: np.ndarray
    observation_noises: np.ndarray
    _states: List[np.ndarray] = field(default_factory=list, repr=False)
    _actions: List[np.ndarray] = field(default_factory=list, repr=False)
    _observations: List[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        T = self.spec.horizon
        self.transition_noises = np.asarray(self.transition_noises, dtype=np.float64).reshape(T, self.spec.state_dim)
        self.observation_noises = np.asarray(self.observation_noises, dtype=np.float64).reshape(T, self.spec.obs_dim)
        self._states = [self.spec.x0.copy()]

    @classmethod
    def from_key(cls, spec: SystemSpec, key: StreamKey) -> "Environment":
        xi, zeta = draw_noise_path(spec, key)
        return cls(spec, xi, zeta)

    @property
    def t(self) -> int:
        return len(self._actions)

    def step(self, u) -> np.ndarray:
        """Apply u_t, advance to x_{t+1} and return o_{t+1}."""
        t = self.t
        u = _vector(u, self.spec.action_dim, "action")
        x_next = step_state(self.spec, t, self._states[-1], u, self.transition_noises[t])
        o_next = observe(self.spec, t + 1, x_next, self.observation_noises[t])
        self._states.append(x_next)
        self._actions.append(u)
        self._observations.append(o_next)
        return o_next

    def trajectory(self) -> Trajectory:
        n = self.t
        return Trajectory(
            states=np.array(self._states).reshape(n + 1, self.spec.state_dim),
            actions=np.array(self._actions).reshape(n, self.spec.action_dim),
            observations=np.array(self._observations).reshape(n, self.spec.obs_dim),
            transition_noises=self.transition_noises[:n].copy(),
            observation_noises=self.observation_noises[:n].copy(),
        )
