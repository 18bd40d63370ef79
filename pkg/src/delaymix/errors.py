"""Exception hierarchy for delaymix.

Configuration problems derive from ConfigError (and ValueError); failures
raised while solving derive from SolverError (and RuntimeError). The CLI maps
the two families to distinct exit codes.
"""

from __future__ import annotations


class DelayMixError(Exception):
    """Base class for every error raised by this package."""


# Configuration and spec validation

class ConfigError(DelayMixError, ValueError):
    """Invalid configuration or spec."""


class DelaySpecError(ConfigError):
    """A delay distribution violates one of its invariants."""


class ProbSumMismatch(DelaySpecError):
    """Atom probabilities do not sum to 1."""


class NegativeDelay(DelaySpecError):
    """A delay (or the lower end of a support) is negative."""


class UnsortedDelays(DelaySpecError):
    """Atom delays are not strictly increasing."""


class DuplicateAtom(DelaySpecError):
    """Two atoms share the same delay."""


class InvalidProbability(DelaySpecError):
    """An atom probability lies outside (0, 1], or a quantile level outside [0, 1]."""


class InvalidUniformBounds(DelaySpecError):
    """Uniform bounds do not satisfy 0 <= a < b."""


class InvalidRate(DelaySpecError):
    """Exponential rate is not positive."""


class InvalidQuantileTable(DelaySpecError):
    """Tabulated quantile grid is malformed."""


class InvalidTruncation(DelaySpecError):
    """Truncation epsilon lies outside (0, 1e-2]."""


class NotContinuous(DelaySpecError):
    """An operation that needs a continuous law was given a discrete one."""


class MissingNodeCount(DelaySpecError):
    """A continuous law was used without a quadrature node count."""


class HistorySpecError(ConfigError):
    """A history function is malformed."""


# Solver failures

class SolverError(DelayMixError, RuntimeError):
    """A solve could not be carried out."""


class PositiveDelayTooSmall(SolverError):
    """A positive delay is shorter than four solver steps."""


class HistoryGap(SolverError):
    """The history does not cover the past the equation needs."""


class ZeroDelayUnsupported(SolverError):
    """The exact solver was given a zero-delay atom."""


class DegreeLimitExceeded(SolverError):
    """An exact segment polynomial grew past the configured degree limit."""


class BreakpointLimitExceeded(SolverError):
    """Propagated breakpoints outnumber the configured budget."""


class DomainError(SolverError):
    """A solution was evaluated outside its domain."""


class AgreementRefused(SolverError):
    """The agreement-window check was asked about a non-constant history."""


class SampleSolveError(SolverError):
    """A per-sample solve failed inside an ensemble."""

    def __init__(self, index: int, delay: float, cause: SolverError) -> None:
        super().__init__(
            f"sample {index} (delay={delay!r}) failed: {type(cause).__name__}: {cause}"
        )
        self.index = index
        self.delay = delay
        self.cause = cause

    def __reduce__(self) -> tuple[type[SampleSolveError], tuple[int, float, SolverError]]:
        # Worker processes pickle it back to the parent
        return type(self), (self.index, self.delay, self.cause)
