"""Iso-damped step-back control design: identification, reduction, PID tuning,
fractional phase shaping and closed-loop analysis for reactor power models."""

__version__ = "0.1.0"

from . import analysis, fixtures, lti, reduction, shaper, sysid, tuning
from .errors import (
    DesignInfeasibleError,
    InfeasibleError,
    IsodampError,
    NumericalError,
    ValidationError,
)
from .lti import RationalTF, TimeSeries

__all__ = [
    "analysis", "fixtures", "lti", "reduction", "shaper", "sysid", "tuning",
    "RationalTF", "TimeSeries", "IsodampError", "ValidationError",
    "NumericalError", "InfeasibleError", "DesignInfeasibleError", "__version__",
]
