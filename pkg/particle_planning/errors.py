"""
Exception hierarchy for the particle planning library.

Report-style operations (spec validation, MGF checks, sweep cells) return
data instead of raising; everything else raises one of these.
"""

from typing import Optional


class ParticlePlanningError(Exception):
    """Base class for every error raised by this package."""


class SpecError(ParticlePlanningError, ValueError):
    """Invalid system specification, time index or vector dimension."""


class PreconditionViolation(ParticlePlanningError, ValueError):
    """An operation was called outside the range its guarantee covers."""


class ParticleDeath(ParticlePlanningError):
    """
    All particle weights are zero, so the weighted state estimate is undefined.

    Args:
        t (int): time index at which the estimate was requested
    """

    def __init__(self, t: int):
        super().__init__(f"all particle weights are zero at t={t}")
        self.t = t


class ImpossibleObservation(ParticlePlanningError):
    """The observation record has zero likelihood under the model (gamma_t = 0)."""

    def __init__(self, t: int):
        super().__init__(f"observation record has zero likelihood at t={t}")
        self.t = t


class OracleNotApplicable(ParticlePlanningError):
    """The requested oracle kind cannot handle the system's noise laws."""


class EnumerationBudgetExceeded(OracleNotApplicable):
    """Live paths (or merged support points) grew beyond the configured budget."""


class SingularInnovation(ParticlePlanningError):
    """Kalman innovation covariance is singular."""


class NoiseHistoryDisabled(ParticlePlanningError):
    """Noise-space analysis was requested on an ensemble that kept no history."""


class ConfigError(ParticlePlanningError, ValueError):
    """
    Run config could not be parsed or does not describe a valid run.

    Args:
        message (str): what is wrong
        lineno (int, optional): 1-based line in the config file
    """

    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
