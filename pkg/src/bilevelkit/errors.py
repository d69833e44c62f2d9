"""Exception types raised across the package."""


class BilevelError(Exception):
    """Base class for all package errors."""


class NonFiniteValue(BilevelError, FloatingPointError):
    """A NaN/Inf appeared in an iterate or function value."""


class Diverged(BilevelError):
    """An iterate norm blew past the divergence threshold."""

    def __init__(self, msg, k=None):
        super().__init__(msg if k is None else f"{msg} (at k={k})")
        self.k = k


class InnerNotConverged(BilevelError):
    pass


class InvalidSchedule(BilevelError, ValueError):
    pass


class InvalidConfig(BilevelError, ValueError):
    pass


class DegenerateInstance(BilevelError):
    pass
