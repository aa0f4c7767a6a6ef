"""
Noise laws for transitions and observations.

Two variants: a diagonal Gaussian (continuous, evaluated as a density) and
a finite-support law (atomic, evaluated as point mass under exact match).
Atomic laws live on an integer lattice: every atom is an integer number of
`lattice_scale` steps, and a query only matches an atom when it sits on
exactly that lattice point.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import SpecError

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"
ATOMIC = "atomic"

MASS_TOLERANCE = 1e-12


class NoiseDistribution:
    """
    Base class for the noise laws mu_t and eta_t.

    Subclasses set `kind`, `dim` and `subgaussian_m` (None when unknown).
    """

    kind: str = ""
    dim: int = 0
    subgaussian_m: Optional[float] = None

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        raise NotImplementedError

    def log_density(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def density(self, x: np.ndarray) -> np.ndarray:
        """Density (continuous) or point mass (atomic) at x; accepts (..., dim)."""
        with np.errstate(under="ignore"):
            return np.exp(self.log_density(x))

    def mean(self) -> np.ndarray:
        raise NotImplementedError

    def covariance(self) -> np.ndarray:
        raise NotImplementedError

    def log_mgf_centered(self, u: np.ndarray) -> float:
        """log E[exp(u . (xi - E xi))], closed form."""
        raise NotImplementedError

    @property
    def is_atomic(self) -> bool:
        return self.kind == ATOMIC

    @property
    def is_point_mass(self) -> bool:
        return False

    def _as_queries(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (self.dim,):
            raise SpecError(f"noise query has trailing dimension {x.shape[-1:]}, expected ({self.dim},)")
        return x


@dataclass(frozen=True, eq=False)
class DiagonalGaussian(NoiseDistribution):
    """
    Gaussian noise with independent coordinates.

    Args:
        mean_vector (Sequence[float]): mean per coordinate
        variances (Sequence[float]): strictly positive variance per coordinate
        subgaussian_m (float, optional): declared sub-Gaussian parameter m (variance proxy 1/m)
    """

    mean_vector: np.ndarray
    variances: np.ndarray
    subgaussian_m: Optional[float] = None
    kind: str = field(default=CONTINUOUS, init=False)

    def __post_init__(self):
        mean_vector = np.atleast_1d(np.asarray(self.mean_vector, dtype=np.float64))
        variances = np.atleast_1d(np.asarray(self.variances, dtype=np.float64))
        if mean_vector.ndim != 1 or mean_vector.shape != variances.shape:
            raise SpecError(f"gaussian mean {mean_vector.shape} and variances {variances.shape} disagree")
        if not np.all(np.isfinite(mean_vector)) or not np.all(np.isfinite(variances)):
            raise SpecError("gaussian parameters must be finite")
        if np.any(variances <= 0):
            raise SpecError("gaussian variances must be strictly positive")
        if self.subgaussian_m is not None and self.subgaussian_m <= 0:
            raise SpecError(f"subgaussian_m must be positive, got {self.subgaussian_m}")
        mean_vector.setflags(write=False)
        variances.setflags(write=False)
        object.__setattr__(self, "mean_vector", mean_vector)
        object.__setattr__(self, "variances", variances)

    @property
    def dim(self) -> int:
        return int(self.mean_vector.shape[0])

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        return self.mean_vector + np.sqrt(self.variances) * rng.standard_normal(shape)

    def log_density(self, x) -> np.ndarray:
        x = self._as_queries(x)
        z = (x - self.mean_vector) ** 2 / self.variances
        return -0.5 * np.sum(z + np.log(2.0 * math.pi * self.variances), axis=-1)

    def mean(self) -> np.ndarray:
        return self.mean_vector.copy()

    def covariance(self) -> np.ndarray:
        return np.diag(self.variances)

    def log_mgf_centered(self, u) -> float:
        u = np.asarray(u, dtype=np.float64)
        return float(0.5 * np.sum(self.variances * u * u))


@dataclass(frozen=True, eq=False)
class FiniteSupport(NoiseDistribution):
    """
    Finite mixture of point masses on an integer lattice.

    Args:
        points (array (K, n)): atom locations; each must be an integer multiple of lattice_scale
        masses (array (K,)): masses in (0, 1] summing to 1
        lattice_scale (float): lattice spacing, default 1.0
        subgaussian_m (float, optional): declared sub-Gaussian parameter m
    """

    points: np.ndarray
    masses: np.ndarray
    lattice_scale: float = 1.0
    subgaussian_m: Optional[float] = None
    kind: str = field(default=ATOMIC, init=False)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        masses = np.atleast_1d(np.asarray(self.masses, dtype=np.float64))
        if points.ndim != 2 or points.shape[0] != masses.shape[0] or points.shape[0] == 0:
            raise SpecError(f"atoms {points.shape} and masses {masses.shape} disagree")
        if not (self.lattice_scale > 0 and math.isfinite(self.lattice_scale)):
            raise SpecError(f"lattice_scale must be positive, got {self.lattice_scale}")
        if np.any(masses <= 0) or np.any(masses > 1):
            raise SpecError("atom masses must lie in (0, 1]")
        if abs(math.fsum(masses) - 1.0) > MASS_TOLERANCE:
            raise SpecError(f"atom masses sum to {math.fsum(masses)!r}, expected 1")
        ticks = np.rint(points / self.lattice_scale)
        if not np.allclose(ticks * self.lattice_scale, points, rtol=0, atol=1e-9 * self.lattice_scale):
            raise SpecError(f"atoms are not on the lattice of spacing {self.lattice_scale}")
        if np.unique(ticks, axis=0).shape[0] != ticks.shape[0]:
            raise SpecError("atom points must be distinct")
        if self.subgaussian_m is not None and self.subgaussian_m <= 0:
            raise SpecError(f"subgaussian_m must be positive, got {self.subgaussian_m}")
        ticks = ticks.astype(np.int64)
        points = ticks * self.lattice_scale
        for arr in (ticks, points, masses):
            arr.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "_ticks", ticks)

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    @property
    def support_size(self) -> int:
        return int(self.points.shape[0])

    @property
    def is_point_mass(self) -> bool:
        return self.support_size == 1

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        if self.is_point_mass:
            # no draw consumed: a degenerate law is not random
            return self.points[0].copy() if size is None else np.repeat(self.points, size, axis=0)
        index = rng.choice(self.support_size, size=size, p=self.masses)
        return self.points[index].copy()

    def mass(self, x) -> np.ndarray:
        """Point mass at x under exact lattice match; 0 off the support."""
        x = self._as_queries(x)
        ticks = np.rint(x / self.lattice_scale)
        on_lattice = np.all(ticks * self.lattice_scale == x, axis=-1)
        hits = np.all(ticks[..., None, :] == self._ticks, axis=-1)
        return np.where(on_lattice, hits.astype(np.float64) @ self.masses, 0.0)

    def density(self, x) -> np.ndarray:
        return self.mass(x)

    def log_density(self, x) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.mass(x))

    def mean(self) -> np.ndarray:
        return np.array([math.fsum(c) for c in (self.masses[:, None] * self.points).T])

    def covariance(self) -> np.ndarray:
        centered = self.points - self.mean()
        return (self.masses[:, None] * centered).T @ centered

    def log_mgf_centered(self, u) -> float:
        u = np.asarray(u, dtype=np.float64)
        exponents = (self.points - self.mean()) @ u
        return float(logsumexp(exponents, b=self.masses))


def point_mass(point: Sequence[float], lattice_scale: float = 1.0) -> FiniteSupport:
    """Dirac law at `point` (zero noise when point is 0)."""
    point = np.atleast_1d(np.asarray(point, dtype=np.float64))
    return FiniteSupport(point[None, :], np.array([1.0]), lattice_scale=lattice_scale)


def uniform_atoms(values: Sequence[float], lattice_scale: float = 1.0,
                  subgaussian_m: Optional[float] = None) -> FiniteSupport:
    """Scalar law putting equal mass on each value."""
    values = np.asarray(values, dtype=np.float64)
    masses = np.full(values.shape[0], 1.0 / values.shape[0])
    return FiniteSupport(values[:, None], masses, lattice_scale=lattice_scale, subgaussian_m=subgaussian_m)


def sample(dist: NoiseDistribution, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """One draw (or `size` draws) from dist; deterministic given the generator state."""
    return dist.sample(rng, size)


def density(dist: NoiseDistribution, x) -> np.ndarray:
    return dist.density(x)


def log_density(dist: NoiseDistribution, x) -> np.ndarray:
    return dist.log_density(x)


@dataclass(frozen=True)
class MgfReport:
    """Outcome of a sub-Gaussian certification attempt."""

    passed: bool
    m_candidate: float
    trials: int
    max_ratio: float


def mgf_bound_check(dist: NoiseDistribution, m_candidate: float, trials: int = 1000,
                    rng: Optional[np.random.Generator] = None) -> MgfReport:
    """
    Check E[exp(u.(xi - E xi))] <= exp(|u|^2 / (2m)) on random u.

    Directions are uniform on the sphere, magnitudes uniform on [0, 3*sqrt(m)].
    The MGF is evaluated in closed form for both variants.

    Args:
        dist (NoiseDistribution): law to certify
        m_candidate (float): candidate sub-Gaussian parameter m
        trials (int): number of sampled u vectors
        rng (np.random.Generator, optional): source for the u vectors

    Returns:
        MgfReport: pass flag and the largest observed ratio MGF / bound
    """
    if m_candidate <= 0:
        raise ValueError(f"m_candidate must be positive, got {m_candidate}")
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(0))
    radius = 3.0 * math.sqrt(m_candidate)
    max_ratio = 0.0
    for _ in range(trials):
        direction = rng.standard_normal(dist.dim)
        direction /= np.linalg.norm(direction)
        u = direction * rng.uniform(0.0, radius)
        log_ratio = dist.log_mgf_centered(u) - float(u @ u) / (2.0 * m_candidate)
        max_ratio = max(max_ratio, math.exp(log_ratio))
    passed = max_ratio <= 1.0 + 1e-12
    if not passed:
        logger.debug(f"MGF bound fails for m={m_candidate}: max ratio {max_ratio:.6g}")
    return MgfReport(passed=passed, m_candidate=m_candidate, trials=trials, max_ratio=max_ratio)
