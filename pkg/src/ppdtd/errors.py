"""Exception types shared across the package.

Every failure mode that callers are expected to handle gets its own class so
tests and the CLI can react by type rather than by message parsing.
"""

from __future__ import annotations


class PpdtdError(Exception):
    """Base class for all package-specific errors."""


class ReducibleChain(PpdtdError):
    """The induced Markov chain is not irreducible (or not aperiodic)."""


class NoConvergence(PpdtdError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class StateSpaceTooLarge(PpdtdError):
    """Enumerating the requested MDP would exceed the configured triple cap."""


class RankDeficient(PpdtdError):
    """The feature matrix does not have full column rank."""


class AssumptionViolation(PpdtdError):
    """The communication graph pair lacks the required spanning-tree overlap."""


class CapExceeded(PpdtdError):
    """A search exceeded its hard step cap (e.g. mixing-time doubling)."""


class NonFiniteIterate(PpdtdError):
    """An algorithm iterate contains NaN or Inf.

    Carries the iteration index at which the blow-up was detected.
    """

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class WeightUnderflow(PpdtdError):
    """A push-sum weight fell below the representable safety floor."""


class SingularSystem(PpdtdError):
    """The exact linear system for the fixed point is singular."""


class PreconditionViolated(PpdtdError):
    """A theory-derived precondition on inputs does not hold."""


class ConfigError(PpdtdError):
    """An experiment configuration is malformed.

    ``errors`` holds one human-readable message per offending field.
    """

    def __init__(self, errors: list[str] | str):
        if isinstance(errors, str):
            errors = [errors]
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class IoFailure(PpdtdError):
    """An input/output operation failed; carries the offending path."""

    def __init__(self, message: str, path: str):
        super().__init__(f"{message}: {path}")
        self.path = path
