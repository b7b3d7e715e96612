"""Exception hierarchy.

Three families map onto the CLI exit codes: :class:`ValidationError` (1),
:class:`NumericalError` (2) and :class:`InfeasibleError` (3).
"""


class IsodampError(Exception):
    pass


class ValidationError(IsodampError, ValueError):
    pass


class NumericalError(IsodampError, ArithmeticError):
    pass


class InfeasibleError(IsodampError):
    pass


# lti-core
class SingularFrequencyError(NumericalError):
    def __init__(self, omega):
        super().__init__(f"pole on the imaginary axis at omega={omega:g} rad/s")
        self.omega = omega


class ClosedLoopSingularityError(NumericalError):
    def __init__(self, omega):
        super().__init__(f"1 + G(jw) vanishes at omega={omega:g} rad/s")
        self.omega = omega


class ImproperSystemError(ValidationError):
    pass


class DelayNotRationalizedError(ValidationError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, index, time=None):
        where = f" (t={time:g} s)" if time is not None else ""
        super().__init__(f"simulation diverged at sample {index}{where}")
        self.index = index
        self.time = time


class IndeterminateGainError(NumericalError):
    pass


# sysid
class UnidentifiableError(NumericalError):
    pass


class LogBranchError(NumericalError):
    pass


# reduction
class InstabilityError(NumericalError):
    pass


class ReductionFailedError(NumericalError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


# tuning
class SpecInfeasibleError(InfeasibleError):
    def __init__(self, message, feasible_range=None):
        super().__init__(message)
        self.feasible_range = feasible_range


# shaper
class InvalidStaticGainError(ValidationError):
    pass


class DesignInfeasibleError(InfeasibleError):
    def __init__(self, constraint, detail=""):
        msg = f"shaper design infeasible: binding constraint '{constraint}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.constraint = constraint


class RealizationAccuracyError(NumericalError):
    def __init__(self, worst_deg, limit_deg, order):
        super().__init__(
            f"order-{order} realization deviates {worst_deg:.3f} deg from the exact "
            f"fractional phase (limit {limit_deg:g} deg)"
        )
        self.worst_deg = worst_deg
        self.limit_deg = limit_deg
        self.order = order


# analysis
class NoCrossoverError(NumericalError):
    pass


class UnknownOperatingPointError(ValidationError):
    pass


# fixtures
class MissingFixtureError(ValidationError, KeyError):
    def __init__(self, name, available):
        super().__init__(f"unknown fixture {name!r}; available: {', '.join(sorted(available))}")
        self.name = name
        self.available = sorted(available)

    def __str__(self):
        return self.args[0]


class FixtureError(ValidationError):
    pass
