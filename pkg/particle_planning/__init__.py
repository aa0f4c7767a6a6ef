"""
Particle filtering for sequential planning in partially observed linear systems.

The planner acts on the weighted particle mean; the ideal process acts on
the exact posterior mean. Running both on the same noise isolates the
reward lost to approximate inference.
"""

from .coupled import CoupledRun, gap_sweep, run_coupled
from .errors import (
    ConfigError,
    EnumerationBudgetExceeded,
    ImpossibleObservation,
    NoiseHistoryDisabled,
    OracleNotApplicable,
    ParticleDeath,
    ParticlePlanningError,
    PreconditionViolation,
    SingularInnovation,
    SpecError,
)
from .model import (
    AvgL1Reward,
    Environment,
    LinearPolicy,
    LipschitzPolicy,
    SumNormReward,
    SystemSpec,
    time_invariant_spec,
    validate_spec,
)
from .noise import DiagonalGaussian, FiniteSupport, point_mass, uniform_atoms
from .oracle import EnumerationFiniteSupport, KalmanGaussian, LatticeForward, ReferenceFilter
from .pf import ParticleEnsemble, estimate_state, init_ensemble, pf_step, run_pf_planner
from .streams import StreamKey

__version__ = "0.1.0"
