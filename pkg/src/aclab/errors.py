"""Exception types shared across the package."""


class AclabError(Exception):
    """Base class for all package errors."""


class StructuralError(AclabError, ValueError):
    """A symbol, field or grid is malformed or mismatched."""


class ResolutionError(AclabError, ValueError):
    """A correlation length or test function is not resolvable on the grid."""

    def __init__(self, message, required_n_x=None, required_n_t=None, min_eps=None):
        super().__init__(message)
        self.required_n_x = required_n_x
        self.required_n_t = required_n_t
        self.min_eps = min_eps


class ConfigurationError(AclabError, ValueError):
    """Solver or experiment configuration violates a documented invariant."""


class UnsupportedDimensionError(AclabError, ValueError):
    """The requested operation is not defined in this spatial dimension."""


class InfiniteAction(AclabError):
    """Raised when the action of a blown-up trajectory is requested.

    A trajectory that hit the sup-norm cap stands for the cemetery state, whose
    action is +inf. This is a signal, not a numeric overflow.
    """


class DomainError(AclabError, ValueError):
    """An argument lies outside the domain where the operation is defined."""
