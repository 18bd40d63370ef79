"""Exact method-of-steps solver for linear scalar multi-delay equations.

Solves u'(t) = alpha * sum_j w_j u(t - d_j) for t >= t0 with all d_j > 0 and a
polynomial (or piecewise polynomial) history. Between consecutive breakpoints
every lagged argument lands inside a single already-known polynomial piece, so
the right-hand side is a polynomial and the solution on that interval is its
antiderivative, matched continuously at the left endpoint.

The result is a PiecewisePoly, which also serves as the reference every
numerical pipeline is checked against.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial.polynomial import polyval

from delaymix.delay_model import history_covers
from delaymix.errors import (
    BreakpointLimitExceeded,
    ConfigError,
    DegreeLimitExceeded,
    DomainError,
    ProbSumMismatch,
    ZeroDelayUnsupported,
)

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from delaymix.delay_model import HistorySpec

logger = logging.getLogger(__name__)

# Breakpoints closer than this are treated as one
MERGE_TOL = 1e-9

DEFAULT_MAX_DEGREE = 200

# Enumeration of propagated breakpoints stops past this many points
DEFAULT_MAX_BREAKPOINTS = 5_000


@dataclass(frozen=True)
class WeightedDelays:
    """A linear multi-delay problem: growth coefficient plus weighted delays.

    Atoms with equal delays are merged by summing their weights; atoms are kept
    sorted by delay.

    Attributes:
        alpha: Growth coefficient.
        atoms: (delay, weight) pairs, weights summing to one.
    """

    alpha: float
    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        merged: dict[float, float] = {}
        for delay, weight in self.atoms:
            if delay < 0 or not math.isfinite(delay):
                raise ConfigError(f"delay {delay} must be a nonnegative finite number")
            if not weight > 0:
                raise ConfigError(f"weight {weight} of delay {delay} must be positive")
            merged[float(delay)] = merged.get(float(delay), 0.0) + float(weight)
        if not merged:
            raise ProbSumMismatch("a weighted-delay problem needs at least one atom")
        total = math.fsum(merged.values())
        if abs(total - 1.0) > 1e-12:
            raise ProbSumMismatch(f"weights sum to {total!r}, expected 1")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "atoms", tuple(sorted(merged.items())))

    @classmethod
    def single(cls, alpha: float, delay: float) -> WeightedDelays:
        """The single-delay problem u'(t) = alpha * u(t - delay)."""
        return cls(alpha, ((delay, 1.0),))

    @property
    def delays(self) -> tuple[float, ...]:
        return tuple(d for d, _ in self.atoms)

    @property
    def max_delay(self) -> float:
        return self.atoms[-1][0]

    @property
    def has_zero_delay(self) -> bool:
        return self.atoms[0][0] == 0.0


@dataclass(frozen=True, eq=False)
class PiecewisePoly:
    """A continuous piecewise polynomial on [t_start, t_end].

    Segment k lives on [breakpoints[k], breakpoints[k+1]] and is stored in powers
    of (t - breakpoints[k]).
    """

    breakpoints: np.ndarray
    segments: tuple[Polynomial, ...]
    _bp_list: list[float] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        bps = np.asarray(self.breakpoints, dtype=float)
        if bps.ndim != 1 or len(bps) < 2:
            raise ValueError("a piecewise polynomial needs at least two breakpoints")
        if np.any(np.diff(bps) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(self.segments) != len(bps) - 1:
            raise ValueError(
                f"{len(bps)} breakpoints need {len(bps) - 1} segments, got {len(self.segments)}"
            )
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "_bp_list", bps.tolist())

    @property
    def t_start(self) -> float:
        return float(self.breakpoints[0])

    @property
    def t_end(self) -> float:
        return float(self.breakpoints[-1])

    def segment_index(self, t: float) -> int:
        """Index of the segment containing ``t``.

        Interior breakpoints belong to the segment on their left; t_start
        belongs to the first segment.
        """
        if t < self.t_start - MERGE_TOL or t > self.t_end + MERGE_TOL:
            raise DomainError(f"t={t} is outside [{self.t_start}, {self.t_end}]")
        idx = bisect.bisect_left(self._bp_list, t) - 1
        return min(max(idx, 0), len(self.segments) - 1)

    def __call__(self, t: float | np.ndarray) -> float | np.ndarray:
        if np.ndim(t) == 0:
            k = self.segment_index(float(t))
            return float(polyval(float(t) - self._bp_list[k], self.segments[k].coef))

        t_arr = np.asarray(t, dtype=float)
        flat = t_arr.ravel()
        if flat.size and (
            flat.min() < self.t_start - MERGE_TOL or flat.max() > self.t_end + MERGE_TOL
        ):
            raise DomainError(
                f"evaluation points reach outside [{self.t_start}, {self.t_end}]"
            )
        idx = np.searchsorted(self.breakpoints, flat, side="left") - 1
        idx = np.clip(idx, 0, len(self.segments) - 1)
        out = np.empty_like(flat)
        for k in np.unique(idx):
            mask = idx == k
            out[mask] = polyval(flat[mask] - self.breakpoints[k], self.segments[k].coef)
        return out.reshape(t_arr.shape)

    def derivative(self, t: float) -> float:
        """Derivative at ``t`` using the same segment convention as evaluation."""
        k = self.segment_index(float(t))
        return float(self.segments[k].deriv()(float(t) - self._bp_list[k]))

    def degree(self, k: int) -> int:
        """Degree of segment k, ignoring trailing zero coefficients."""
        return self.segments[k].trim().degree()

    def check_continuity(self, rtol: float = 1e-12) -> float:
        """Return the largest scaled jump at interior breakpoints.

        Raises:
            ValueError: If a jump exceeds rtol * (1 + |value|).
        """
        worst = 0.0
        for k in range(1, len(self.segments)):
            width = self._bp_list[k] - self._bp_list[k - 1]
            left = float(self.segments[k - 1](width))
            right = float(self.segments[k](0.0))
            scaled = abs(left - right) / (1.0 + abs(right))
            if scaled > rtol:
                raise ValueError(
                    f"jump of {left - right:.3e} at t={self._bp_list[k]} exceeds tolerance"
                )
            worst = max(worst, scaled)
        return worst


def evaluate(pp: PiecewisePoly, t: float | np.ndarray) -> float | np.ndarray:
    """Evaluate a piecewise polynomial at ``t`` (scalar or array)."""
    return pp(t)


def shift(poly: Polynomial, offset: float) -> Polynomial:
    """Re-expand p(y) in the variable x = y - offset, i.e. return x -> p(x + offset)."""
    if offset == 0.0:
        return poly
    return poly(Polynomial([offset, 1.0]))


def _merge_sorted(points: Iterable[float], tol: float = MERGE_TOL) -> list[float]:
    merged: list[float] = []
    for p in sorted(points):
        if merged and p - merged[-1] <= tol:
            continue
        merged.append(p)
    return merged


def breakpoints(
    delays: Sequence[float],
    t0: float,
    t_end: float,
    origins: Sequence[float] = (),
    *,
    max_points: int = DEFAULT_MAX_BREAKPOINTS,
    max_generation: int | None = None,
) -> list[float]:
    """Propagate derivative discontinuities forward from t0.

    Many short delays make the number of sums t0 + sum_j k_j d_j below t_end
    grow combinatorially, so the enumeration is capped by ``max_points``.

    Args:
        delays: Delays of the problem; zero delays do not propagate anything.
        t0: Initial time.
        t_end: Final time (always included).
        origins: Extra discontinuity sources after t0, e.g. history breakpoints
            shifted by a delay.
        max_points: Largest number of points the enumeration may produce.
        max_generation: If given, only sums of at most this many delays
            (counted from t0 or an origin) are propagated.

    Returns:
        Sorted times t0 + sum_j k_j d_j <= t_end over nonnegative integers k_j,
        seeded from t0 and ``origins``, with t_end appended and points closer
        than 1e-9 merged.

    Raises:
        BreakpointLimitExceeded: If more than ``max_points`` points would be produced.
    """
    if not t_end > t0:
        raise ConfigError(f"t_end={t_end} must exceed t0={t0}")
    if any(d < 0 for d in delays):
        raise ConfigError("delays must be nonnegative")
    if max_points < 1:
        raise ConfigError(f"max_points must be positive, got {max_points}")

    steps = sorted({float(d) for d in delays if d > 0})
    found = [float(t0)]
    frontier = [float(t0)] + [float(o) for o in origins if t0 < o <= t_end + MERGE_TOL]
    for o in frontier[1:]:
        _insert_unique(found, o)

    generation = 0
    while frontier and (max_generation is None or generation < max_generation):
        next_frontier: list[float] = []
        for p in frontier:
            for d in steps:
                q = p + d
                if q > t_end + MERGE_TOL:
                    break
                if _insert_unique(found, q):
                    next_frontier.append(q)
                    if len(found) > max_points:
                        raise BreakpointLimitExceeded(
                            f"more than {max_points} breakpoints on [{t0}, {t_end}] "
                            f"for {len(steps)} delays (smallest {steps[0]:g})"
                        )
        frontier = next_frontier
        generation += 1

    # Points within tolerance of t_end collapse onto t_end itself
    points = [p for p in found if p < t_end - MERGE_TOL]
    points.append(float(t_end))
    return _merge_sorted(points)


def _insert_unique(sorted_points: list[float], q: float) -> bool:
    """Insert q unless a point within MERGE_TOL exists; report whether it was new."""
    i = bisect.bisect_left(sorted_points, q)
    if i < len(sorted_points) and sorted_points[i] - q <= MERGE_TOL:
        return False
    if i > 0 and q - sorted_points[i - 1] <= MERGE_TOL:
        return False
    sorted_points.insert(i, q)
    return True


def history_origins(hist: HistorySpec, delays: Sequence[float]) -> list[float]:
    """Solution breakpoints seeded by interior history breakpoints."""
    return [
        h + d
        for h in hist.interior_breakpoints
        for d in delays
        if d > 0 and h + d > hist.t0
    ]


def solve_exact(
    prob: WeightedDelays,
    hist: HistorySpec,
    t_end: float,
    *,
    max_degree: int = DEFAULT_MAX_DEGREE,
    max_breakpoints: int = DEFAULT_MAX_BREAKPOINTS,
) -> PiecewisePoly:
    """Solve the problem exactly by the method of steps.

    Args:
        prob: Problem with strictly positive delays.
        hist: History; must reach back to t0 minus the largest delay.
        t_end: Final time, greater than the history's t0.
        max_degree: Largest segment degree allowed.
        max_breakpoints: Largest number of breakpoints (segment ends) allowed.

    Returns:
        The solution on [t0, t_end].

    Raises:
        ZeroDelayUnsupported: If any delay is zero (use the numerical solver).
        HistoryGap: If the history does not cover the needed past.
        DegreeLimitExceeded: If a segment degree passes ``max_degree``.
        BreakpointLimitExceeded: If the delays produce more than ``max_breakpoints``
            breakpoints before t_end.
    """
    if prob.has_zero_delay:
        raise ZeroDelayUnsupported(
            "zero-delay atoms make the right-hand side depend on the unknown; "
            "use the numerical solver"
        )
    t0 = hist.t0
    history_covers(hist, prob.delays)
    bps = breakpoints(
        prob.delays, t0, t_end, history_origins(hist, prob.delays), max_points=max_breakpoints
    )

    segments: list[Polynomial] = []
    value = float(hist.evaluate(t0))

    for k in range(len(bps) - 1):
        left, right = bps[k], bps[k + 1]
        rhs = Polynomial([0.0])
        if prob.alpha != 0.0:
            for delay, weight in prob.atoms:
                anchor, piece = _lagged_piece(bps, segments, hist, left - delay, right - delay)
                rhs = rhs + (prob.alpha * weight) * shift(piece, left - delay - anchor)
        seg = rhs.integ(k=[value])
        if seg.degree() > max_degree:
            raise DegreeLimitExceeded(
                f"segment on [{left}, {right}] has degree {seg.degree()} > {max_degree}"
            )
        segments.append(seg)
        value = float(seg(right - left))

    logger.debug(
        "solve_exact: %d segments on [%g, %g], final degree %d",
        len(segments), t0, t_end, segments[-1].degree(),
    )
    return PiecewisePoly(np.asarray(bps), tuple(segments))


def _lagged_piece(
    bps: list[float],
    segments: list[Polynomial],
    hist: HistorySpec,
    lo: float,
    hi: float,
) -> tuple[float, Polynomial]:
    """Find the known piece covering the lagged interval [lo, hi].

    Returns (anchor, polynomial in t - anchor). No breakpoint lies strictly
    inside the lagged interval, so its midpoint identifies the piece.
    """
    mid = 0.5 * (lo + hi)
    if mid <= hist.t0:
        return hist.piece_at(mid)
    j = bisect.bisect_right(bps, mid) - 1
    return bps[j], segments[j]


def mix(parts: Sequence[PiecewisePoly], weights: Sequence[float]) -> PiecewisePoly:
    """Weighted sum of piecewise polynomials on a common domain.

    Args:
        parts: Solutions sharing t_start and t_end.
        weights: Mixing weights summing to one.

    Returns:
        The weighted sum on the union of all breakpoints.
    """
    if not parts or len(parts) != len(weights):
        raise ConfigError("mix needs one weight per part and at least one part")
    total = math.fsum(weights)
    if abs(total - 1.0) > 1e-12:
        raise ProbSumMismatch(f"mixing weights sum to {total!r}, expected 1")
    t_start, t_end = parts[0].t_start, parts[0].t_end
    for p in parts[1:]:
        if abs(p.t_start - t_start) > MERGE_TOL or abs(p.t_end - t_end) > MERGE_TOL:
            raise DomainError(
                f"cannot mix domains [{p.t_start}, {p.t_end}] and [{t_start}, {t_end}]"
            )

    union = _merge_sorted(float(b) for p in parts for b in p.breakpoints)
    # Keep the exact shared end point
    union[-1] = t_end

    segments = []
    for k in range(len(union) - 1):
        left, mid = union[k], 0.5 * (union[k] + union[k + 1])
        acc = Polynomial([0.0])
        for part, w in zip(parts, weights, strict=True):
            j = part.segment_index(mid)
            acc = acc + float(w) * shift(part.segments[j], left - float(part.breakpoints[j]))
        segments.append(acc)

    return PiecewisePoly(np.asarray(union), tuple(segments))
