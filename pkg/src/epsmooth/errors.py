"""Exception hierarchy shared by the package."""


class EpsmoothError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(EpsmoothError, ValueError):
    pass


class NotPositiveDefinite(EpsmoothError, ValueError):
    pass


class NonPositiveEpsilon(EpsmoothError, ValueError):
    pass


class NonSymmetricMatrix(EpsmoothError, ValueError):
    pass


class SolverError(EpsmoothError, RuntimeError):
    """The dual QP did not produce a usable solution."""


class InfeasibleConstraints(EpsmoothError):
    """The linear inequality constraints admit no feasible trajectory."""


class MissingDual(EpsmoothError, ValueError):
    pass
