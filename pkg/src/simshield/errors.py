"""Exception types shared across the package.

The CLI maps these onto process exit codes: ValidationError -> 2,
the numerical family -> 3, BudgetExhausted -> 4.
"""


class ValidationError(ValueError):
    """Malformed scenario input or parameter out of its documented domain."""


class ApplicabilityError(ValidationError):
    """Operation applied to a system shape it is not defined for."""


class ApproximationDomainError(ValidationError):
    """Requested approximation outside its validity domain (e.g. |theta| >= pi)."""


class NumericalToleranceError(RuntimeError):
    """Adaptive quadrature or grid refinement failed to reach the tolerance.

    Carries the worst offending location in args where available.
    """


class WindowError(NumericalToleranceError):
    """Frequency window too small: the coupling spectrum is not negligible at its edges."""


class IntegratorError(NumericalToleranceError):
    """ODE propagation failed a step-accuracy or norm-conservation check."""


class BudgetExhausted(RuntimeError):
    """Optimizer evaluation budget ran out before any improvement."""
