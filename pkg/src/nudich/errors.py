"""Exception hierarchy for the dichotomy toolkit."""


class DichotomyError(Exception):
    """Base class for all toolkit errors."""


class NonOrderedTimes(DichotomyError, ValueError):
    """Raised when an evolution operator is requested with t < s."""


class PropagationFailure(DichotomyError):
    """The ODE integrator could not meet its tolerance."""


class SingularRestriction(DichotomyError):
    """U(t,s) restricted to the Q-range is numerically singular."""


class RestrictionNotInvertible(SingularRestriction):
    pass


class CommutationViolation(DichotomyError):
    """P(t)U(t,s) != U(t,s)P(s) beyond the allowed threshold."""


class EmptyRange(DichotomyError):
    pass


class NoSamples(DichotomyError, ValueError):
    pass


class DivergentTail(DichotomyError):
    """No finite tail bound can be certified for an improper integral."""


class QuadratureFailure(DichotomyError):
    pass


class HypothesisViolated(DichotomyError, ValueError):
    """gamma > epsilon or beta in [0, gamma) does not hold."""


class NotQuadratic(DichotomyError):
    pass


class InvalidParam(DichotomyError, ValueError):
    pass
