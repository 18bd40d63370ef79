"""Fixed-step Runge-Kutta solver with dense output for multi-delay equations.

The classical four-stage Runge-Kutta method is applied to
u'(t) = alpha * sum_j w_j u(t - d_j). Lagged values come from the history for
arguments at or before t0 and from a cubic Hermite interpolant of the
completed steps otherwise. Zero delays enter the stages as an instantaneous
linear term, which makes the pure ODE limit a special case.

Stepping across a derivative discontinuity costs accuracy, so callers put the
propagated breakpoints into ``SolverConfig.mandatory_points``
(see ``aligned_config``).
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from delaymix.delay_model import ConstantHistory, history_covers
from delaymix.errors import (
    BreakpointLimitExceeded,
    ConfigError,
    DomainError,
    PositiveDelayTooSmall,
)
from delaymix.polyexact import (
    DEFAULT_MAX_BREAKPOINTS,
    MERGE_TOL,
    breakpoints,
    history_origins,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from delaymix.delay_model import HistorySpec
    from delaymix.polyexact import WeightedDelays

logger = logging.getLogger(__name__)

# Positive delays must span at least this many steps
MIN_STEPS_PER_DELAY = 4

# Generations kept when the full breakpoint set is over budget; they carry the
# jumps in u', u'' and u'''
ALIGNED_GENERATIONS = 2

Real = float | np.ndarray


@dataclass(frozen=True)
class SolverConfig:
    """Step size plus times the step sequence must hit exactly."""

    step: float
    mandatory_points: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not (math.isfinite(self.step) and self.step > 0):
            raise ConfigError(f"solver step must be positive, got {self.step}")
        object.__setattr__(
            self, "mandatory_points", tuple(sorted(float(p) for p in self.mandatory_points))
        )


def aligned_config(
    step: float,
    delays: Sequence[float],
    hist: HistorySpec,
    t_end: float,
    *,
    max_points: int = DEFAULT_MAX_BREAKPOINTS,
) -> SolverConfig:
    """A SolverConfig whose mandatory points are the propagated breakpoints.

    When the full set exceeds ``max_points`` only sums of at most
    ``ALIGNED_GENERATIONS`` delays are kept; the rest carry jumps in the
    fourth derivative or higher, which RK4 steps across at full order. If even
    those are over budget the plain uniform grid is used.
    """
    origins = history_origins(hist, delays)
    try:
        points = breakpoints(delays, hist.t0, t_end, origins, max_points=max_points)
        return SolverConfig(step, tuple(points))
    except BreakpointLimitExceeded as exc:
        logger.warning("%s; aligning only sums of at most %d delays", exc, ALIGNED_GENERATIONS)
    try:
        points = breakpoints(
            delays, hist.t0, t_end, origins,
            max_points=max_points, max_generation=ALIGNED_GENERATIONS,
        )
        return SolverConfig(step, tuple(points))
    except BreakpointLimitExceeded as exc:
        logger.warning("%s; stepping on the uniform grid", exc)
    return SolverConfig(step)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Numerical solution on a grid, with the data needed for dense output.

    Attributes:
        grid: Strictly increasing times starting at t0.
        values: Solution values at the grid points.
        derivs: Right-hand-side values at the grid points.
        hist: History used before t0.
    """

    grid: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    hist: HistorySpec

    @property
    def t0(self) -> float:
        return float(self.grid[0])

    @property
    def t_end(self) -> float:
        return float(self.grid[-1])

    def __call__(self, t: float | np.ndarray) -> float | np.ndarray:
        return eval_dense(self, t)

    def derivative(self, t: float) -> float:
        """Derivative of the dense output at a time in (t0, t_end]."""
        t = float(t)
        if t <= self.t0 or t > self.t_end + MERGE_TOL:
            raise DomainError(f"t={t} is outside ({self.t0}, {self.t_end}]")
        grid = self.grid
        i = int(np.clip(np.searchsorted(grid, t, side="left"), 1, len(grid) - 1))
        return float(
            _hermite_slope(
                float(grid[i - 1]), float(grid[i]), self.values[i - 1], self.values[i],
                self.derivs[i - 1], self.derivs[i], min(t, float(grid[i])),
            )
        )


def build_grid(t0: float, t_end: float, cfg: SolverConfig) -> np.ndarray:
    """Uniform step grid on [t0, t_end] augmented with the mandatory points.

    Grid points within 1e-9 of a mandatory point are replaced by it, so cells
    are shortened to land on the mandatory points exactly.
    """
    if not t_end > t0:
        raise ConfigError(f"t_end={t_end} must exceed t0={t0}")
    for p in cfg.mandatory_points:
        if p < t0 - MERGE_TOL or p > t_end + MERGE_TOL:
            raise ConfigError(f"mandatory point {p} lies outside [{t0}, {t_end}]")

    n = int(math.floor((t_end - t0) / cfg.step + 1e-9))
    uniform = t0 + cfg.step * np.arange(n + 1)
    required = [t0, *cfg.mandatory_points, t_end]

    merged: list[float] = []
    for p in sorted({float(x) for x in required}):
        if merged and p - merged[-1] <= MERGE_TOL:
            continue
        merged.append(p)
    merged[0], merged[-1] = float(t0), float(t_end)

    grid = sorted(
        [float(u) for u in uniform if _far_from(merged, float(u)) and t0 < u < t_end] + merged
    )
    return np.asarray(grid)


def _far_from(sorted_points: list[float], x: float) -> bool:
    i = bisect.bisect_left(sorted_points, x)
    if i < len(sorted_points) and sorted_points[i] - x <= MERGE_TOL:
        return False
    return not (i > 0 and x - sorted_points[i - 1] <= MERGE_TOL)


def _hermite(ta: Real, tb: Real, ya: Real, yb: Real, fa: Real, fb: Real, s: Real) -> Real:
    """Cubic Hermite interpolant on [ta, tb] at s; scalars or numpy arrays."""
    h = tb - ta
    th = (s - ta) / h
    th2 = th * th
    th3 = th2 * th
    return (
        (2 * th3 - 3 * th2 + 1) * ya
        + (th3 - 2 * th2 + th) * h * fa
        + (-2 * th3 + 3 * th2) * yb
        + (th3 - th2) * h * fb
    )


def _hermite_slope(
    ta: Real, tb: Real, ya: Real, yb: Real, fa: Real, fb: Real, s: Real
) -> Real:
    """Derivative of ``_hermite`` with respect to s."""
    h = tb - ta
    th = (s - ta) / h
    return (
        (6 * th * th - 6 * th) * (ya - yb) / h
        + (3 * th * th - 4 * th + 1) * fa
        + (3 * th * th - 2 * th) * fb
    )


def solve_numeric(
    prob: WeightedDelays,
    hist: HistorySpec,
    t_end: float,
    cfg: SolverConfig,
) -> Trajectory:
    """Integrate the problem with RK4 on the configured grid.

    Args:
        prob: Problem; zero delays are allowed.
        hist: History covering [t0 - max delay, t0].
        t_end: Final time.
        cfg: Step size and mandatory points.

    Returns:
        The trajectory on [t0, t_end].

    Raises:
        PositiveDelayTooSmall: If some delay d satisfies 0 < d < 4 * step.
        HistoryGap: If the history does not reach far enough back.
    """
    t0 = hist.t0
    for d in prob.delays:
        if 0 < d < MIN_STEPS_PER_DELAY * cfg.step:
            raise PositiveDelayTooSmall(
                f"delay {d} is shorter than {MIN_STEPS_PER_DELAY} steps of size {cfg.step}; "
                "reduce the step"
            )
    history_covers(hist, prob.delays)

    grid = build_grid(t0, t_end, cfg).tolist()
    alpha = prob.alpha
    instant = alpha * math.fsum(w for d, w in prob.atoms if d == 0.0)
    lagged = [(d, alpha * w) for d, w in prob.atoms if d > 0.0]

    const_hist = hist.value if isinstance(hist, ConstantHistory) else None
    values = [float(hist.evaluate(t0))]
    derivs: list[float] = []

    def lag(s: float, done: int) -> float:
        # done = index of the last completed grid point
        if s <= t0:
            return const_hist if const_hist is not None else float(hist.evaluate(s))
        i = bisect.bisect_left(grid, s, 1, done + 1)
        if grid[i] == s:
            return values[i]
        return _hermite(
            grid[i - 1], grid[i], values[i - 1], values[i], derivs[i - 1], derivs[i], s
        )

    def rhs(t: float, y: float, done: int) -> float:
        acc = instant * y
        for d, aw in lagged:
            acc += aw * lag(t - d, done)
        return acc

    for n in range(len(grid) - 1):
        t, y = grid[n], values[n]
        h = grid[n + 1] - t
        # k1 doubles as the stored derivative for dense output. Delays of at least four
        # steps keep every lag argument behind grid[n - 3], where derivs are known.
        k1 = rhs(t, y, n)
        derivs.append(k1)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1, n)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2, n)
        k4 = rhs(t + h, y + h * k3, n)
        values.append(y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0)

    last = len(grid) - 1
    derivs.append(rhs(grid[last], values[last], last))

    logger.debug("solve_numeric: %d steps on [%g, %g]", last, t0, t_end)
    return Trajectory(
        grid=np.asarray(grid),
        values=np.asarray(values),
        derivs=np.asarray(derivs),
        hist=hist,
    )


def eval_dense(traj: Trajectory, t: float | np.ndarray) -> float | np.ndarray:
    """Evaluate a trajectory anywhere in its domain.

    History values are returned for t <= t0, stored values at grid points, and
    the cubic Hermite interpolant inside cells.

    Raises:
        DomainError: If t lies beyond the last grid point.
        HistoryGap: If t lies before the history's start.
    """
    t_arr = np.asarray(t, dtype=float)
    flat = np.atleast_1d(t_arr).ravel()
    if flat.size and flat.max() > traj.t_end + MERGE_TOL:
        raise DomainError(f"t={flat.max()} lies beyond the trajectory end {traj.t_end}")

    grid, ys, fs = traj.grid, traj.values, traj.derivs
    out = np.empty_like(flat)

    past = flat <= traj.t0
    if np.any(past):
        out[past] = traj.hist.evaluate(flat[past])

    ahead = ~past
    if np.any(ahead):
        s = np.minimum(flat[ahead], traj.t_end)
        i = np.clip(np.searchsorted(grid, s, side="left"), 1, len(grid) - 1)
        val = _hermite(grid[i - 1], grid[i], ys[i - 1], ys[i], fs[i - 1], fs[i], s)
        # Grid points return the stored value bit for bit
        out[ahead] = np.where(s == grid[i], ys[i], val)

    return float(out[0]) if t_arr.ndim == 0 else out.reshape(t_arr.shape)
