"""Metrics separating the averaged solution from the averaged model.

The mean of solutions (v_R) and the solution of the averaged equation (v_D)
start out identical for a constant history and stay identical until the
smallest delay has been felt twice. Past t0 + 2 * min delay they generally
part ways, and this module measures by how much and from when.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Any

import numpy as np

from delaymix.delay_model import DiscreteDelay
from delaymix.distributed import residual
from delaymix.errors import AgreementRefused, ConfigError, DomainError
from delaymix.polyexact import MERGE_TOL

if TYPE_CHECKING:
    from collections.abc import Sequence

    from delaymix.dde_solver import Trajectory
    from delaymix.delay_model import HistorySpec
    from delaymix.distributed import DistributedProblem
    from delaymix.ensemble import MixtureResult
    from delaymix.polyexact import PiecewisePoly

logger = logging.getLogger(__name__)

# Largest |v_R - v_D| accepted inside the agreement window
AGREEMENT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    """Pointwise and integrated differences between v_R and v_D on a grid.

    Attributes:
        grid: Evaluation times.
        vR: Mixture values.
        vD: Distributed-solution values.
        sup_diff: max |vR - vD| over the grid.
        l2_diff: Trapezoid-rule L2 norm of vR - vD over the grid.
        first_divergence: First grid time with |vR - vD| > tol, or None.
            Limited by the grid resolution; no root refinement is done.
        tol: Divergence threshold.
        agreement_window_end: t0 + 2 * min delay for discrete mixtures, else None.
        provenance: Where the atoms came from, with quadrature settings if any.
    """

    grid: np.ndarray
    vR: np.ndarray
    vD: np.ndarray
    sup_diff: float
    l2_diff: float
    first_divergence: float | None
    tol: float
    agreement_window_end: float | None
    provenance: dict[str, Any]

    @property
    def absdiff(self) -> np.ndarray:
        return np.abs(self.vR - self.vD)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        for key in ("grid", "vR", "vD"):
            out[key] = out[key].tolist()
        return out


@dataclass(frozen=True)
class AgreementResult:
    """Outcome of the agreement-window check; ``margin`` is tol minus the worst gap."""

    passed: bool
    margin: float
    window_end: float
    worst: float


def compare(
    vR: MixtureResult,
    vD: PiecewisePoly | Trajectory,
    grid: Sequence[float] | np.ndarray,
    tol: float = 1e-9,
) -> ComparisonReport:
    """Evaluate both objects on a grid and summarize their difference.

    Raises:
        DomainError: If the grid leaves the common domain of the two solutions.
    """
    if not tol >= 0:
        raise ConfigError(f"tol must be nonnegative, got {tol}")
    grid = np.asarray(grid, dtype=float)
    lo = max(vR.t_start, _start(vD))
    hi = min(vR.t_end, _end(vD))
    if grid.size == 0 or grid.min() < lo - MERGE_TOL or grid.max() > hi + MERGE_TOL:
        raise DomainError(f"comparison grid must lie inside [{lo}, {hi}]")

    r = np.asarray(vR(grid), dtype=float)
    d = np.asarray(vD(grid), dtype=float)
    diff = np.abs(r - d)

    above = np.flatnonzero(diff > tol)
    first = float(grid[above[0]]) if above.size else None

    window_end = None
    if vR.provenance == "discrete":
        window_end = vR.t_start + 2.0 * min(vR.nodes)
    provenance: dict[str, Any] = {"kind": vR.provenance}
    if vR.provenance == "quadrature":
        provenance |= {"n_nodes": vR.n_nodes, "truncation_eps": vR.truncation_eps}

    report = ComparisonReport(
        grid=grid,
        vR=r,
        vD=d,
        sup_diff=float(diff.max()),
        l2_diff=float(np.sqrt(np.trapezoid(diff**2, grid))),
        first_divergence=first,
        tol=float(tol),
        agreement_window_end=window_end,
        provenance=provenance,
    )
    logger.info(
        "compare: sup %.3e, L2 %.3e, first divergence %s",
        report.sup_diff, report.l2_diff, first,
    )
    return report


def _start(sol: PiecewisePoly | Trajectory) -> float:
    return sol.t_start if hasattr(sol, "t_start") else sol.t0


def _end(sol: PiecewisePoly | Trajectory) -> float:
    return sol.t_end


def agreement_check(
    spec: DiscreteDelay, report: ComparisonReport, hist: HistorySpec
) -> AgreementResult:
    """Check that v_R and v_D coincide on [t0, t0 + 2 * min delay].

    Only grid points of the report inside the window are inspected.

    Raises:
        AgreementRefused: For a non-constant history.
        ConfigError: For a continuous law.
    """
    if not isinstance(spec, DiscreteDelay):
        raise ConfigError("agreement_check needs a discrete delay law")
    if not hist.is_constant:
        raise AgreementRefused(
            "the agreement window is only established for constant histories"
        )
    window_end = hist.t0 + 2.0 * spec.min_delay
    inside = report.grid <= window_end + MERGE_TOL
    worst = float(report.absdiff[inside].max()) if np.any(inside) else 0.0
    return AgreementResult(
        passed=worst <= AGREEMENT_TOL,
        margin=AGREEMENT_TOL - worst,
        window_end=window_end,
        worst=worst,
    )


@dataclass(frozen=True, eq=False)
class OperatorResiduals:
    """Residuals of the distributed equation for both candidate solutions."""

    points: np.ndarray
    vR: np.ndarray
    vD: np.ndarray


def operator_residuals(
    vR: MixtureResult,
    vD: PiecewisePoly | Trajectory,
    problem: DistributedProblem,
    hist: HistorySpec,
    points: Sequence[float] | np.ndarray,
) -> OperatorResiduals:
    """Plug both solutions into the averaged equation.

    v_D satisfies it up to solver error; v_R in general does not once the
    agreement window has passed.
    """
    pts = np.asarray(points, dtype=float)
    return OperatorResiduals(
        points=pts,
        vR=residual(vR, problem, hist, pts),
        vD=residual(vD, problem, hist, pts),
    )
