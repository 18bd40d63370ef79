"""Delay distributions and history functions.

This module describes the two inputs every pipeline shares:

- The law of the nonnegative random delay, either a finite set of weighted
  atoms or one of a few continuous families (uniform, exponential, or a
  user-tabulated quantile function).
- The history function prescribing the solution before the initial time.

It also provides sampling by inverse-CDF transform, quantiles, and the
Gauss-Legendre discretization that turns a continuous law into weighted atoms.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import pairwise
from typing import TYPE_CHECKING

import numpy as np
from numpy.polynomial import Polynomial

from delaymix.errors import (
    DuplicateAtom,
    HistoryGap,
    HistorySpecError,
    InvalidProbability,
    InvalidQuantileTable,
    InvalidRate,
    InvalidTruncation,
    InvalidUniformBounds,
    MissingNodeCount,
    NegativeDelay,
    NotContinuous,
    ProbSumMismatch,
    UnsortedDelays,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

logger = logging.getLogger(__name__)

# Probabilities must sum to one within this absolute tolerance
PROB_SUM_TOL = 1e-12

DEFAULT_TRUNCATION_EPS = 1e-6
MAX_TRUNCATION_EPS = 1e-2


# =============================================================================
# Delay distributions
# =============================================================================


@dataclass(frozen=True)
class DiscreteDelay:
    """A delay taking finitely many values.

    Attributes:
        atoms: (delay, probability) pairs, delays strictly increasing.
    """

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "atoms", tuple((float(d), float(p)) for d, p in self.atoms)
        )

    @property
    def delays(self) -> np.ndarray:
        return np.array([d for d, _ in self.atoms], dtype=float)

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms], dtype=float)

    @property
    def min_delay(self) -> float:
        return min(d for d, _ in self.atoms)

    @property
    def max_delay(self) -> float:
        return max(d for d, _ in self.atoms)

    @property
    def is_point_mass(self) -> bool:
        return len(self.atoms) == 1


@dataclass(frozen=True)
class UniformDelay:
    """Uniform law on [a, b]. The truncation epsilon is unused (compact support)."""

    a: float
    b: float
    truncation_eps: float = DEFAULT_TRUNCATION_EPS


@dataclass(frozen=True)
class ExponentialDelay:
    """Exponential law with the given rate."""

    rate: float
    truncation_eps: float = DEFAULT_TRUNCATION_EPS


@dataclass(frozen=True)
class TabulatedDelay:
    """A law given by its quantile function on a grid of levels.

    The quantile function is the linear interpolant of (probs, quantiles), so the
    density is piecewise constant. ``probs`` runs from 0 to 1.
    """

    probs: tuple[float, ...]
    quantiles: tuple[float, ...]
    truncation_eps: float = DEFAULT_TRUNCATION_EPS

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        object.__setattr__(self, "quantiles", tuple(float(q) for q in self.quantiles))


ContinuousDelay = UniformDelay | ExponentialDelay | TabulatedDelay
DelaySpec = DiscreteDelay | ContinuousDelay


def is_continuous(spec: DelaySpec) -> bool:
    """Check whether a spec describes a continuous law."""
    return isinstance(spec, UniformDelay | ExponentialDelay | TabulatedDelay)


def validate(spec: DelaySpec) -> None:
    """Check every invariant of a delay spec.

    Args:
        spec: The spec to check.

    Raises:
        DelaySpecError: The subclass names the first violated invariant.
    """
    if isinstance(spec, DiscreteDelay):
        _validate_discrete(spec)
        return

    eps = spec.truncation_eps
    if not (math.isfinite(eps) and 0.0 < eps <= MAX_TRUNCATION_EPS):
        raise InvalidTruncation(f"truncation_eps must lie in (0, {MAX_TRUNCATION_EPS}], got {eps}")

    if isinstance(spec, UniformDelay):
        if not (math.isfinite(spec.a) and math.isfinite(spec.b)):
            raise InvalidUniformBounds(f"bounds must be finite, got a={spec.a}, b={spec.b}")
        if spec.a < 0:
            raise NegativeDelay(f"uniform lower bound {spec.a} is negative")
        if not spec.a < spec.b:
            raise InvalidUniformBounds(f"uniform requires a < b, got a={spec.a}, b={spec.b}")
    elif isinstance(spec, ExponentialDelay):
        if not (math.isfinite(spec.rate) and spec.rate > 0):
            raise InvalidRate(f"exponential rate must be positive, got {spec.rate}")
    elif isinstance(spec, TabulatedDelay):
        _validate_tabulated(spec)
    else:
        raise TypeError(f"unknown delay spec {spec!r}")


def _validate_discrete(spec: DiscreteDelay) -> None:
    if not spec.atoms:
        raise ProbSumMismatch("discrete spec has no atoms (probability sum 0)")

    for delay, prob in spec.atoms:
        if not math.isfinite(delay) or delay < 0:
            raise NegativeDelay(f"delay {delay} is negative or not finite")
        if not (math.isfinite(prob) and 0.0 < prob <= 1.0):
            raise InvalidProbability(f"probability {prob} of delay {delay} is outside (0, 1]")

    delays = [d for d, _ in spec.atoms]
    for prev, cur in pairwise(delays):
        if cur == prev:
            raise DuplicateAtom(f"delay {cur} appears more than once")
        if cur < prev:
            raise UnsortedDelays(f"delays must be strictly increasing ({prev} then {cur})")

    total = math.fsum(p for _, p in spec.atoms)
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ProbSumMismatch(f"probabilities sum to {total!r}, expected 1")


def _validate_tabulated(spec: TabulatedDelay) -> None:
    probs, qs = spec.probs, spec.quantiles
    if len(probs) < 2 or len(probs) != len(qs):
        raise InvalidQuantileTable(
            f"need at least two (p, q) pairs of equal length, got {len(probs)} and {len(qs)}"
        )
    if not all(math.isfinite(v) for v in probs + qs):
        raise InvalidQuantileTable("quantile table contains non-finite values")
    if probs[0] != 0.0 or probs[-1] != 1.0:
        raise InvalidQuantileTable("probability levels must start at 0 and end at 1")
    if any(b <= a for a, b in pairwise(probs)):
        raise InvalidQuantileTable("probability levels must be strictly increasing")
    if any(b < a for a, b in pairwise(qs)):
        raise InvalidQuantileTable("quantiles must be nondecreasing")
    if qs[0] < 0:
        raise NegativeDelay(f"q(0) = {qs[0]} is negative")
    if qs[-1] <= qs[0]:
        raise InvalidQuantileTable("quantile table describes a point mass; use a discrete spec")


# =============================================================================
# Distribution functions
# =============================================================================


def cdf(spec: DelaySpec, x: float | np.ndarray) -> float | np.ndarray:
    """Cumulative distribution function P(delay <= x)."""
    x_arr = np.asarray(x, dtype=float)

    if isinstance(spec, DiscreteDelay):
        cum = np.cumsum(spec.probs)
        idx = np.searchsorted(spec.delays, x_arr, side="right")
        out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
    elif isinstance(spec, UniformDelay):
        out = np.clip((x_arr - spec.a) / (spec.b - spec.a), 0.0, 1.0)
    elif isinstance(spec, ExponentialDelay):
        out = np.where(x_arr < 0, 0.0, -np.expm1(-spec.rate * np.maximum(x_arr, 0.0)))
    else:
        out = _tabulated_cdf(spec, x_arr)

    return float(out) if np.ndim(out) == 0 else out


def _tabulated_cells(spec: TabulatedDelay, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Cell k satisfies q[k] <= x < q[k+1]; -1 below the table, len-1 at or above the top
    qs = np.asarray(spec.quantiles)
    idx = np.searchsorted(qs, x, side="right") - 1
    inside = (idx >= 0) & (idx < len(qs) - 1)
    return idx, inside


def _tabulated_cdf(spec: TabulatedDelay, x: np.ndarray) -> np.ndarray:
    ps, qs = np.asarray(spec.probs), np.asarray(spec.quantiles)
    idx, inside = _tabulated_cells(spec, x)
    k = np.clip(idx, 0, len(qs) - 2)
    width = qs[k + 1] - qs[k]
    frac = np.divide(x - qs[k], width, out=np.zeros_like(x), where=width > 0)
    inner = ps[k] + (ps[k + 1] - ps[k]) * frac
    return np.where(inside, inner, np.where(idx < 0, 0.0, 1.0))


def pdf(spec: ContinuousDelay, x: float | np.ndarray) -> float | np.ndarray:
    """Probability density of a continuous law."""
    x_arr = np.asarray(x, dtype=float)

    if isinstance(spec, DiscreteDelay):
        raise NotContinuous("a discrete delay has no density")
    if isinstance(spec, UniformDelay):
        inside = (x_arr >= spec.a) & (x_arr <= spec.b)
        out = np.where(inside, 1.0 / (spec.b - spec.a), 0.0)
    elif isinstance(spec, ExponentialDelay):
        out = np.where(x_arr < 0, 0.0, spec.rate * np.exp(-spec.rate * np.maximum(x_arr, 0.0)))
    else:
        ps, qs = np.asarray(spec.probs), np.asarray(spec.quantiles)
        idx, inside = _tabulated_cells(spec, x_arr)
        k = np.clip(idx, 0, len(qs) - 2)
        width = qs[k + 1] - qs[k]
        slope = np.divide(ps[k + 1] - ps[k], width, out=np.zeros_like(width), where=width > 0)
        out = np.where(inside, slope, 0.0)

    return float(out) if np.ndim(out) == 0 else out


def quantile(spec: DelaySpec, p: float) -> float:
    """Generalized inverse CDF.

    For a discrete law this is the smallest atom whose cumulative probability
    is at least ``p``.

    Args:
        spec: A valid delay spec.
        p: Probability level in [0, 1].

    Returns:
        The quantile (``inf`` at p = 1 for the exponential law).
    """
    if not 0.0 <= p <= 1.0:
        raise InvalidProbability(f"quantile level {p} is outside [0, 1]")

    if isinstance(spec, DiscreteDelay):
        cum = np.cumsum(spec.probs)
        idx = int(np.searchsorted(cum, p, side="left"))
        return spec.atoms[min(idx, len(spec.atoms) - 1)][0]
    if isinstance(spec, UniformDelay):
        return spec.a + p * (spec.b - spec.a)
    if isinstance(spec, ExponentialDelay):
        if p == 1.0:
            return math.inf
        return -math.log1p(-p) / spec.rate
    return float(np.interp(p, spec.probs, spec.quantiles))


def mean(spec: DelaySpec) -> float:
    """Expected delay."""
    if isinstance(spec, DiscreteDelay):
        return math.fsum(d * p for d, p in spec.atoms)
    if isinstance(spec, UniformDelay):
        return 0.5 * (spec.a + spec.b)
    if isinstance(spec, ExponentialDelay):
        return 1.0 / spec.rate
    # The quantile function is piecewise linear, so the trapezoid rule is exact
    return float(np.trapezoid(spec.quantiles, spec.probs))


# =============================================================================
# Sampling
# =============================================================================


def sample_stream(seed: int, *key: int) -> np.random.Generator:
    """Derive an independent random stream from a master seed and an index key.

    Streams for different keys are statistically independent and do not depend
    on the order in which they are created.

    Args:
        seed: Nonnegative master seed.
        key: Integers identifying the stream, e.g. (sample_index,) or (batch, index).

    Returns:
        A fresh PCG64-backed generator.
    """
    seq = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))


def sample_delay(spec: DelaySpec, stream: np.random.Generator) -> float:
    """Draw one realization of the delay.

    Exactly one uniform variate is consumed from ``stream`` and pushed through
    the generalized inverse CDF.
    """
    u = float(stream.random())
    return quantile(spec, u)


# =============================================================================
# Quadrature discretization
# =============================================================================


def truncated_support(spec: ContinuousDelay) -> tuple[float, float]:
    """Interval the quadrature runs over: [a, b] for uniform laws, else [q(eps), q(1 - eps)]."""
    if isinstance(spec, UniformDelay):
        return spec.a, spec.b
    eps = spec.truncation_eps
    return quantile(spec, eps), quantile(spec, 1.0 - eps)


def discretize(spec: DelaySpec, n_nodes: int | None) -> list[tuple[float, float]]:
    """Replace a continuous law by weighted atoms.

    Gauss-Legendre nodes are mapped affinely onto the truncated support, each
    weight is multiplied by the density at its node, and the weights are
    renormalized to sum to one.

    Args:
        spec: A valid continuous delay spec.
        n_nodes: Number of quadrature nodes (at least 1).

    Returns:
        List of (delay, weight) pairs with positive weights summing to one.
    """
    if isinstance(spec, DiscreteDelay):
        raise NotContinuous("discretize needs a continuous delay law")
    if n_nodes is None:
        raise MissingNodeCount("a continuous delay law needs n_nodes")
    if n_nodes < 1:
        raise MissingNodeCount(f"n_nodes must be positive, got {n_nodes}")
    validate(spec)

    lo, hi = truncated_support(spec)
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    nodes = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    # The affine Jacobian is a constant factor and cancels in the renormalization
    weights = w * pdf(spec, nodes)
    weights = weights / weights.sum()

    logger.debug("discretized %s on [%g, %g] with %d nodes", spec, lo, hi, n_nodes)
    return [(float(d), float(q)) for d, q in zip(nodes, weights, strict=True)]


# =============================================================================
# History functions
# =============================================================================


@dataclass(frozen=True)
class ConstantHistory:
    """History equal to ``value`` for every t <= t0."""

    value: float
    t0: float = 0.0

    @property
    def t_min(self) -> float:
        return -math.inf

    @property
    def is_constant(self) -> bool:
        return True

    @property
    def interior_breakpoints(self) -> tuple[float, ...]:
        return ()

    def evaluate(self, t: float | np.ndarray) -> float | np.ndarray:
        if np.ndim(t) == 0:
            return float(self.value)
        return np.full(np.shape(t), float(self.value))

    def piece_at(self, t: float) -> tuple[float, Polynomial]:
        """Return (anchor, polynomial in t - anchor) valid around ``t``."""
        return self.t0, Polynomial([float(self.value)])


@dataclass(frozen=True)
class PolynomialHistory:
    """History given by one polynomial in powers of (t - t0)."""

    coeffs: tuple[float, ...]
    t0: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    @property
    def t_min(self) -> float:
        return -math.inf

    @property
    def is_constant(self) -> bool:
        return all(c == 0.0 for c in self.coeffs[1:])

    @property
    def interior_breakpoints(self) -> tuple[float, ...]:
        return ()

    def evaluate(self, t: float | np.ndarray) -> float | np.ndarray:
        out = np.polynomial.polynomial.polyval(np.asarray(t, dtype=float) - self.t0, self.coeffs)
        return float(out) if np.ndim(out) == 0 else out

    def piece_at(self, t: float) -> tuple[float, Polynomial]:
        return self.t0, Polynomial(self.coeffs)


@dataclass(frozen=True)
class PiecewiseHistory:
    """History given segment by segment on [breakpoints[0], t0].

    Segment k covers [breakpoints[k], breakpoints[k+1]] and its coefficients are
    in powers of (t - breakpoints[k]). The last breakpoint is t0.
    """

    breakpoints: tuple[float, ...]
    coeffs: tuple[tuple[float, ...], ...]
    t0: float = 0.0
    _bps: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))
        object.__setattr__(
            self, "coeffs", tuple(tuple(float(c) for c in seg) for seg in self.coeffs)
        )
        object.__setattr__(self, "_bps", np.asarray(self.breakpoints, dtype=float))

    @property
    def t_min(self) -> float:
        return self.breakpoints[0]

    @property
    def is_constant(self) -> bool:
        first = self.coeffs[0][0] if self.coeffs and self.coeffs[0] else None
        return all(
            seg[0] == first and all(c == 0.0 for c in seg[1:]) for seg in self.coeffs
        )

    @property
    def interior_breakpoints(self) -> tuple[float, ...]:
        return self.breakpoints[1:-1]

    def _segment_index(self, t: np.ndarray) -> np.ndarray:
        if np.any(t < self.breakpoints[0] - 1e-12):
            raise HistoryGap(
                f"history is defined from t={self.breakpoints[0]}, asked for t={np.min(t)}"
            )
        idx = np.searchsorted(self._bps, t, side="right") - 1
        return np.clip(idx, 0, len(self.coeffs) - 1)

    def evaluate(self, t: float | np.ndarray) -> float | np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        idx = self._segment_index(np.atleast_1d(t_arr))
        flat = np.atleast_1d(t_arr)
        out = np.array([
            np.polynomial.polynomial.polyval(tt - self.breakpoints[k], self.coeffs[k])
            for tt, k in zip(flat, idx, strict=True)
        ])
        return float(out[0]) if t_arr.ndim == 0 else out.reshape(t_arr.shape)

    def piece_at(self, t: float) -> tuple[float, Polynomial]:
        k = int(self._segment_index(np.atleast_1d(float(t)))[0])
        return self.breakpoints[k], Polynomial(self.coeffs[k])


HistorySpec = ConstantHistory | PolynomialHistory | PiecewiseHistory


def validate_history(hist: HistorySpec) -> None:
    """Check that a history function is well formed.

    Raises:
        HistorySpecError: With a message naming the problem.
    """
    if not math.isfinite(hist.t0):
        raise HistorySpecError(f"t0 must be finite, got {hist.t0}")

    if isinstance(hist, ConstantHistory):
        if not math.isfinite(hist.value):
            raise HistorySpecError(f"constant history value {hist.value} is not finite")
    elif isinstance(hist, PolynomialHistory):
        if not hist.coeffs:
            raise HistorySpecError("polynomial history needs at least one coefficient")
        if not all(math.isfinite(c) for c in hist.coeffs):
            raise HistorySpecError("polynomial history has non-finite coefficients")
    elif isinstance(hist, PiecewiseHistory):
        bps = hist.breakpoints
        if len(bps) < 2:
            raise HistorySpecError("piecewise history needs at least two breakpoints")
        if any(b <= a for a, b in pairwise(bps)):
            raise HistorySpecError("piecewise history breakpoints must be strictly increasing")
        if bps[-1] != hist.t0:
            raise HistorySpecError(f"last history breakpoint {bps[-1]} must equal t0={hist.t0}")
        if len(hist.coeffs) != len(bps) - 1:
            raise HistorySpecError(
                f"{len(bps) - 1} segments need {len(bps) - 1} coefficient lists, "
                f"got {len(hist.coeffs)}"
            )
        for seg in hist.coeffs:
            if not seg or not all(math.isfinite(c) for c in seg):
                raise HistorySpecError("every history segment needs finite coefficients")
    else:
        raise TypeError(f"unknown history spec {hist!r}")


def history_covers(hist: HistorySpec, delays: Sequence[float]) -> None:
    """Raise HistoryGap unless the history reaches back past the largest delay."""
    needed = hist.t0 - max(delays, default=0.0)
    if hist.t_min > needed + 1e-12:
        raise HistoryGap(
            f"history starts at t={hist.t_min} but the equation needs t={needed}"
        )
