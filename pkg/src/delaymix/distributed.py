"""Averaging models: the distributed delay equation.

Averaging the single-delay operators over the law of D gives

    v_D'(t) = alpha * E[v_D(t - D)],

a single equation with many delays. For a discrete law the expectation is a
finite weighted sum; a continuous law is first reduced to weighted atoms by
the same Gauss-Legendre discretization the mixtures use, so both pipelines
carry the same discretization error. Either way the problem handed to the
solvers is a ``WeightedDelays``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np

from delaymix.dde_solver import SolverConfig, aligned_config, solve_numeric
from delaymix.delay_model import DiscreteDelay, discretize, validate
from delaymix.errors import ConfigError
from delaymix.polyexact import (
    DEFAULT_MAX_BREAKPOINTS,
    DEFAULT_MAX_DEGREE,
    WeightedDelays,
    solve_exact,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from delaymix.dde_solver import Trajectory
    from delaymix.delay_model import DelaySpec, HistorySpec
    from delaymix.ensemble import MixtureResult
    from delaymix.polyexact import PiecewisePoly

logger = logging.getLogger(__name__)

Mode = Literal["exact", "numeric"]


@dataclass(frozen=True)
class DistributedProblem:
    """The operator-averaged equation as data.

    Attributes:
        alpha: Growth coefficient.
        effective_atoms: (delay, weight) pairs; the law's atoms for discrete
            specs, quadrature atoms for continuous ones.
        provenance: ``"discrete"`` or ``"quadrature"``.
        n_nodes: Quadrature node count (quadrature provenance only).
        truncation_eps: Tail mass cut off before the quadrature (quadrature only).
    """

    alpha: float
    effective_atoms: tuple[tuple[float, float], ...]
    provenance: Literal["discrete", "quadrature"]
    n_nodes: int | None = None
    truncation_eps: float | None = None

    def __post_init__(self) -> None:
        # Building the solver problem checks positivity and the unit sum
        self.as_weighted()

    def as_weighted(self) -> WeightedDelays:
        return WeightedDelays(self.alpha, self.effective_atoms)

    @property
    def delays(self) -> tuple[float, ...]:
        return tuple(d for d, _ in self.effective_atoms)


def build_distributed(
    alpha: float, spec: DelaySpec, n_nodes: int | None = None
) -> DistributedProblem:
    """Average the single-delay operators over the law of the delay.

    Args:
        alpha: Growth coefficient.
        spec: Delay law.
        n_nodes: Quadrature nodes; required for continuous laws, ignored otherwise.

    Raises:
        MissingNodeCount: For a continuous law without ``n_nodes``.
        DelaySpecError: If the spec is invalid.
    """
    validate(spec)
    if isinstance(spec, DiscreteDelay):
        return DistributedProblem(float(alpha), tuple(spec.atoms), "discrete")
    atoms = discretize(spec, n_nodes)
    return DistributedProblem(
        float(alpha),
        tuple(atoms),
        "quadrature",
        n_nodes=n_nodes,
        truncation_eps=spec.truncation_eps,
    )


def solve_distributed(
    prob: DistributedProblem,
    hist: HistorySpec,
    t_end: float,
    mode: Mode = "exact",
    cfg: SolverConfig | None = None,
    *,
    max_degree: int = DEFAULT_MAX_DEGREE,
    max_breakpoints: int = DEFAULT_MAX_BREAKPOINTS,
) -> PiecewisePoly | Trajectory:
    """Solve the distributed equation, exactly or with the RK4 solver.

    The numerical solve runs on a grid aligned with the propagated breakpoints
    of the effective atoms; over ``max_breakpoints`` the alignment is thinned
    out (see ``aligned_config``) instead of failing.

    Raises:
        ConfigError: Numeric mode without a solver config.
        ZeroDelayUnsupported: Exact mode with a zero-delay atom.
        BreakpointLimitExceeded: Exact mode with more than ``max_breakpoints``
            breakpoints, typical of many short quadrature delays.
    """
    weighted = prob.as_weighted()
    if mode == "exact":
        sol = solve_exact(
            weighted, hist, t_end, max_degree=max_degree, max_breakpoints=max_breakpoints
        )
    elif mode == "numeric":
        if cfg is None:
            raise ConfigError("numeric mode needs a solver config")
        aligned = aligned_config(
            cfg.step, weighted.delays, hist, t_end, max_points=max_breakpoints
        )
        merged = SolverConfig(cfg.step, cfg.mandatory_points + aligned.mandatory_points)
        sol = solve_numeric(weighted, hist, t_end, merged)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    logger.info(
        "distributed solve (%s, %d atoms) on [%g, %g]",
        mode, len(prob.effective_atoms), hist.t0, t_end,
    )
    return sol


def residual(
    solution: PiecewisePoly | Trajectory | MixtureResult,
    problem: DistributedProblem,
    hist: HistorySpec,
    points: Sequence[float] | np.ndarray,
) -> np.ndarray:
    """Residual v'(t) - alpha * sum_k w_k v(t - d_k) of any solution-like object.

    Lagged arguments at or before t0 are read from the history.

    Args:
        solution: Anything with ``__call__`` and ``derivative``.
        problem: The distributed equation to test against.
        hist: History of the solution.
        points: Times in (t0, t_end].

    Returns:
        The residual at each point.
    """
    t0 = hist.t0
    out = np.empty(len(points))
    for k, t in enumerate(np.asarray(points, dtype=float)):
        lagged = math.fsum(
            w * (float(hist.evaluate(t - d)) if t - d <= t0 else float(solution(t - d)))
            for d, w in problem.effective_atoms
        )
        out[k] = solution.derivative(float(t)) - problem.alpha * lagged
    return out
