from __future__ import annotations


class DswapError(Exception):
    """Base class for package errors."""


class InvalidParameter(DswapError, ValueError):
    pass


class SchedulingError(DswapError):
    pass


class ValidationError(DswapError):
    pass


class LoweringError(DswapError):
    pass


class CapacityError(DswapError):
    """Raised when a simulation or oracle would exceed the configured size."""


class AbstractionError(DswapError):
    """Macro gate reached an engine that only runs physical circuits."""


class EngineError(DswapError):
    pass


class InjectionError(DswapError):
    pass


class AccountingError(DswapError):
    pass


class EstimationError(DswapError):
    """Estimate is undefined or ill-conditioned (e.g. non-positive trace)."""
