"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments outside its precondition."""


class ConfigurationError(ValueError):
    """Inconsistent model or sampler configuration (e.g. q does not divide N)."""


class ResourceGuardError(ValueError):
    """Exhaustive computation refused because the state space is too large."""


class InternalConsistencyError(RuntimeError):
    """Incremental caches disagree with a from-scratch recomputation."""


class InfeasibleMove(Exception):
    """A coarse move would leave the cell occupancy range [0, q].

    This is a rejection signal rather than an error: samplers treat it as an
    immediate coarse-level rejection.
    """
