"""Averaging solutions: Monte Carlo ensembles and their mixture limits.

For a random delay D, each sample draws a delay, solves the single-delay
equation u'(t) = alpha * u(t - d), and the sample mean of the solutions
estimates E[u(t)]. As the sample count grows the mean converges to the
mixture of per-delay solutions weighted by the law of D:

- Discrete laws: sum_i p_i v_i, computed exactly with the polynomial oracle.
- Continuous laws: the integral against the density, approximated by the
  Gauss-Legendre atoms from ``delay_model.discretize``.

``slln_diagnostics`` measures how fast the sample mean approaches that limit.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np

from delaymix.dde_solver import SolverConfig, aligned_config, solve_numeric
from delaymix.delay_model import (
    DiscreteDelay,
    discretize,
    sample_delay,
    sample_stream,
    validate,
)
from delaymix.errors import ConfigError, NotContinuous, SampleSolveError, SolverError
from delaymix.polyexact import (
    DEFAULT_MAX_BREAKPOINTS,
    DEFAULT_MAX_DEGREE,
    MERGE_TOL,
    PiecewisePoly,
    WeightedDelays,
    mix,
    solve_exact,
)

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

    from delaymix.dde_solver import Trajectory
    from delaymix.delay_model import ContinuousDelay, DelaySpec, HistorySpec

logger = logging.getLogger(__name__)

Method = Literal["numeric", "exact"]

# Node count standing in for the exact integral over a continuous law
REFERENCE_NODES = 256


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Sample statistics of an ensemble of single-delay solutions.

    Attributes:
        grid: Evaluation times.
        mean: Sample mean of the solutions on the grid.
        variance: Unbiased pointwise sample variance (zero when M = 1).
        M: Number of samples.
        seed: Master seed the per-sample streams were derived from.
        delays: The sampled delays, in sample order.
        atom_counts: Per-atom tallies for discrete laws, in atom order.
        samples: Per-sample grid values (M rows), only when requested.
    """

    grid: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    M: int
    seed: int
    delays: np.ndarray
    atom_counts: tuple[int, ...] | None = None
    samples: np.ndarray | None = None

    @property
    def stderr(self) -> np.ndarray:
        """Standard error of the mean on the grid."""
        return np.sqrt(self.variance / self.M)


@dataclass(frozen=True, eq=False)
class MixtureResult:
    """The mixture of per-delay solutions, sum_k w_k v_{d_k}.

    Exactly one of ``poly`` (exact oracle) and ``trajectories`` (numerical
    solves) is populated.
    """

    nodes: tuple[float, ...]
    weights: tuple[float, ...]
    provenance: Literal["discrete", "quadrature"]
    poly: PiecewisePoly | None = None
    trajectories: tuple[Trajectory, ...] = ()
    n_nodes: int | None = None
    truncation_eps: float | None = None

    @property
    def t_start(self) -> float:
        return self.poly.t_start if self.poly is not None else self.trajectories[0].t0

    @property
    def t_end(self) -> float:
        return self.poly.t_end if self.poly is not None else self.trajectories[0].t_end

    def __call__(self, t: float | np.ndarray) -> float | np.ndarray:
        if self.poly is not None:
            return self.poly(t)
        stacked = np.stack([np.asarray(traj(t), dtype=float) for traj in self.trajectories])
        out = np.tensordot(np.asarray(self.weights), stacked, axes=1)
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, t: float) -> float:
        if self.poly is not None:
            return self.poly.derivative(t)
        pairs = zip(self.weights, self.trajectories, strict=True)
        return math.fsum(w * traj.derivative(t) for w, traj in pairs)


@dataclass(frozen=True)
class SllnResult:
    """Convergence table of the sample mean towards the mixture limit."""

    sample_sizes: tuple[int, ...]
    mean_errors: tuple[float, ...]
    batch_errors: tuple[tuple[float, ...], ...]
    slope: float | None
    batches: int
    seed: int

    @property
    def table(self) -> list[tuple[int, float]]:
        return list(zip(self.sample_sizes, self.mean_errors, strict=True))


# =============================================================================
# Single-delay solves on a grid
# =============================================================================


def single_delay_config(
    cfg: SolverConfig, delay: float, hist: HistorySpec, t_end: float
) -> SolverConfig:
    """Extend a config with the breakpoints of one single-delay problem."""
    points = aligned_config(cfg.step, [delay], hist, t_end).mandatory_points
    return SolverConfig(cfg.step, tuple(cfg.mandatory_points) + points)


def solve_single(
    alpha: float,
    delay: float,
    hist: HistorySpec,
    t_end: float,
    cfg: SolverConfig,
    method: Method = "numeric",
    max_degree: int = DEFAULT_MAX_DEGREE,
    *,
    max_breakpoints: int = DEFAULT_MAX_BREAKPOINTS,
) -> PiecewisePoly | Trajectory:
    """Solve u'(t) = alpha * u(t - delay).

    Raises:
        ZeroDelayUnsupported: If the exact method is asked for a zero delay.
    """
    prob = WeightedDelays.single(alpha, delay)
    if method == "exact":
        return solve_exact(
            prob, hist, t_end, max_degree=max_degree, max_breakpoints=max_breakpoints
        )
    return solve_numeric(prob, hist, t_end, single_delay_config(cfg, delay, hist, t_end))


@dataclass(frozen=True, eq=False)
class _GridJob:
    alpha: float
    hist: HistorySpec
    t_end: float
    cfg: SolverConfig
    grid: np.ndarray
    method: Method
    max_degree: int

    def __call__(self, delay: float) -> np.ndarray:
        sol = solve_single(
            self.alpha, delay, self.hist, self.t_end, self.cfg, self.method, self.max_degree
        )
        return np.asarray(sol(self.grid), dtype=float)


def _check_grid(grid: np.ndarray, t0: float, t_end: float) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ConfigError("evaluation grid must be a nonempty 1-D sequence")
    if grid.min() < t0 - MERGE_TOL or grid.max() > t_end + MERGE_TOL:
        raise ConfigError(f"evaluation grid must lie inside [{t0}, {t_end}]")
    return grid


# =============================================================================
# Monte Carlo ensemble
# =============================================================================


def draw_delays(
    spec: DelaySpec, M: int, seed: int, stream_key: Sequence[int] = ()
) -> np.ndarray:
    """Draw M delays, sample i from the stream derived from (seed, *stream_key, i)."""
    return np.array(
        [sample_delay(spec, sample_stream(seed, *stream_key, i)) for i in range(M)],
        dtype=float,
    )


def run_ensemble(
    alpha: float,
    spec: DelaySpec,
    hist: HistorySpec,
    t_end: float,
    M: int,
    seed: int,
    cfg: SolverConfig,
    grid: Sequence[float] | np.ndarray,
    *,
    method: Method = "numeric",
    stream_key: Sequence[int] = (),
    keep_samples: bool = False,
    workers: int = 1,
    max_degree: int = DEFAULT_MAX_DEGREE,
    solution_cache: dict[float, np.ndarray] | None = None,
) -> EnsembleResult:
    """Estimate E[u(t)] by averaging M sampled single-delay solutions.

    Args:
        alpha: Growth coefficient.
        spec: Law of the delay.
        hist: History shared by all samples.
        t_end: Final time.
        M: Number of samples.
        seed: Master seed; sample i uses the stream keyed (*stream_key, i).
        cfg: Numerical solver settings (breakpoints of each sample are added).
        grid: Evaluation times inside [t0, t_end].
        method: ``"numeric"`` (RK4) or ``"exact"`` (polynomial oracle) per sample.
        stream_key: Prefix for the per-sample stream keys, used to derive
            independent batches from one seed.
        keep_samples: Also return every sample's grid values.
        workers: Processes used for the per-sample solves; the reduction is
            always a fold in sample order, so results do not depend on it.
        max_degree: Degree guard for the exact method.
        solution_cache: Grid values per delay, shared across calls. Discrete
            laws use a private cache when none is given.

    Returns:
        Mean, unbiased variance and tallies on the grid.

    Raises:
        SampleSolveError: If a sample's solve fails; carries the sample index.
    """
    if M < 1:
        raise ConfigError(f"sample count must be positive, got {M}")
    validate(spec)
    grid = _check_grid(grid, hist.t0, t_end)
    job = _GridJob(alpha, hist, t_end, cfg, grid, method, max_degree)

    delays = draw_delays(spec, M, seed, stream_key)
    discrete = isinstance(spec, DiscreteDelay)
    if solution_cache is None and discrete:
        solution_cache = {}

    mean = np.zeros_like(grid)
    m2 = np.zeros_like(grid)
    samples = np.empty((M, grid.size)) if keep_samples else None
    report_every = max(M // 10, 1)

    for k, values in enumerate(_iter_sample_values(job, delays, solution_cache, workers), 1):
        # Welford update in sample order
        delta = values - mean
        mean += delta / k
        m2 += delta * (values - mean)
        if samples is not None:
            samples[k - 1] = values
        if k % report_every == 0:
            logger.info("ensemble: %d/%d samples", k, M)

    variance = m2 / (M - 1) if M > 1 else np.zeros_like(grid)

    atom_counts = None
    if discrete:
        atom_counts = tuple(int(np.sum(delays == d)) for d, _ in spec.atoms)

    return EnsembleResult(
        grid=grid,
        mean=mean,
        variance=variance,
        M=M,
        seed=seed,
        delays=delays,
        atom_counts=atom_counts,
        samples=samples,
    )


def _iter_sample_values(
    job: _GridJob,
    delays: np.ndarray,
    cache: dict[float, np.ndarray] | None,
    workers: int,
) -> Iterator[np.ndarray]:
    """Yield each sample's grid values in sample order."""
    if cache is not None:
        for i, d in enumerate(delays):
            d = float(d)
            if d not in cache:
                cache[d] = _guarded(job, i, d)
            yield cache[d]
        return

    if workers <= 1:
        for i, d in enumerate(delays):
            yield _guarded(job, i, float(d))
        return

    chunk = max(len(delays) // (8 * workers), 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = pool.map(_guarded_job, [(job, i, float(d)) for i, d in enumerate(delays)],
                           chunksize=chunk)
        yield from results


def _guarded(job: _GridJob, index: int, delay: float) -> np.ndarray:
    try:
        return job(delay)
    except SolverError as exc:
        raise SampleSolveError(index, delay, exc) from exc


def _guarded_job(args: tuple[_GridJob, int, float]) -> np.ndarray:
    return _guarded(*args)


# =============================================================================
# Mixture limits
# =============================================================================


def exact_mixture(
    alpha: float,
    spec: DiscreteDelay,
    hist: HistorySpec,
    t_end: float,
    *,
    max_degree: int = DEFAULT_MAX_DEGREE,
) -> MixtureResult:
    """The sample-mean limit sum_i p_i v_i for a discrete law, exactly."""
    if not isinstance(spec, DiscreteDelay):
        raise ConfigError("exact_mixture needs a discrete delay law")
    validate(spec)
    parts = [
        solve_exact(WeightedDelays.single(alpha, d), hist, t_end, max_degree=max_degree)
        for d, _ in spec.atoms
    ]
    weights = [p for _, p in spec.atoms]
    return MixtureResult(
        nodes=tuple(d for d, _ in spec.atoms),
        weights=tuple(weights),
        provenance="discrete",
        poly=mix(parts, weights),
    )


def tally_mixture(
    alpha: float,
    spec: DiscreteDelay,
    hist: HistorySpec,
    t_end: float,
    atom_counts: Sequence[int],
    *,
    max_degree: int = DEFAULT_MAX_DEGREE,
) -> PiecewisePoly:
    """The finite-sample mean sum_i (M_i / M) v_i rebuilt exactly from tallies."""
    if len(atom_counts) != len(spec.atoms):
        raise ConfigError("need one tally per atom")
    M = sum(atom_counts)
    if M < 1:
        raise ConfigError("tallies must contain at least one sample")
    used = [(d, c) for (d, _), c in zip(spec.atoms, atom_counts, strict=True) if c > 0]
    parts = [
        solve_exact(WeightedDelays.single(alpha, d), hist, t_end, max_degree=max_degree)
        for d, _ in used
    ]
    return mix(parts, [c / M for _, c in used])


def numeric_mixture(
    alpha: float,
    spec: DiscreteDelay,
    hist: HistorySpec,
    t_end: float,
    cfg: SolverConfig,
) -> MixtureResult:
    """sum_i p_i v_i from numerical solves; handles zero-delay atoms."""
    validate(spec)
    return _solved_mixture(alpha, list(spec.atoms), hist, t_end, cfg, "numeric", "discrete")


def quadrature_mixture(
    alpha: float,
    spec: ContinuousDelay,
    hist: HistorySpec,
    t_end: float,
    n_nodes: int,
    cfg: SolverConfig,
    *,
    method: Method = "numeric",
    max_degree: int = DEFAULT_MAX_DEGREE,
) -> MixtureResult:
    """The integral of v_d(t) against the delay density, by Gauss-Legendre atoms.

    Args:
        alpha: Growth coefficient.
        spec: Continuous delay law.
        hist: History.
        t_end: Final time.
        n_nodes: Quadrature nodes.
        cfg: Numerical solver settings.
        method: Per-node solver, numeric by default.
        max_degree: Degree guard for the exact method.
    """
    if isinstance(spec, DiscreteDelay):
        raise NotContinuous("quadrature_mixture needs a continuous delay law")
    atoms = discretize(spec, n_nodes)
    result = _solved_mixture(
        alpha, atoms, hist, t_end, cfg, method, "quadrature", max_degree=max_degree
    )
    logger.info("quadrature mixture with %d nodes", n_nodes)
    return MixtureResult(
        nodes=result.nodes,
        weights=result.weights,
        provenance="quadrature",
        poly=result.poly,
        trajectories=result.trajectories,
        n_nodes=n_nodes,
        truncation_eps=spec.truncation_eps,
    )


def _solved_mixture(
    alpha: float,
    atoms: Sequence[tuple[float, float]],
    hist: HistorySpec,
    t_end: float,
    cfg: SolverConfig,
    method: Method,
    provenance: Literal["discrete", "quadrature"],
    max_degree: int = DEFAULT_MAX_DEGREE,
) -> MixtureResult:
    nodes = tuple(float(d) for d, _ in atoms)
    weights = tuple(float(w) for _, w in atoms)
    if method == "exact":
        parts = [
            solve_exact(WeightedDelays.single(alpha, d), hist, t_end, max_degree=max_degree)
            for d in nodes
        ]
        return MixtureResult(nodes, weights, provenance, poly=mix(parts, weights))
    trajectories = tuple(solve_single(alpha, d, hist, t_end, cfg) for d in nodes)
    return MixtureResult(nodes, weights, provenance, trajectories=trajectories)


def reference_mixture(
    alpha: float,
    spec: DelaySpec,
    hist: HistorySpec,
    t_end: float,
    cfg: SolverConfig,
    *,
    reference_nodes: int = REFERENCE_NODES,
    method: Method = "numeric",
    max_degree: int = DEFAULT_MAX_DEGREE,
) -> MixtureResult:
    """The best available stand-in for the limit of the sample mean."""
    if isinstance(spec, DiscreteDelay):
        if spec.min_delay > 0:
            return exact_mixture(alpha, spec, hist, t_end, max_degree=max_degree)
        return numeric_mixture(alpha, spec, hist, t_end, cfg)
    return quadrature_mixture(
        alpha, spec, hist, t_end, reference_nodes, cfg, method=method, max_degree=max_degree
    )


# =============================================================================
# Convergence diagnostics
# =============================================================================


def slln_diagnostics(
    alpha: float,
    spec: DelaySpec,
    hist: HistorySpec,
    t_end: float,
    Ms: Sequence[int],
    n_batches: int,
    seed: int,
    cfg: SolverConfig,
    grid: Sequence[float] | np.ndarray,
    *,
    reference: MixtureResult | None = None,
    reference_nodes: int = REFERENCE_NODES,
    method: Method = "numeric",
    max_degree: int = DEFAULT_MAX_DEGREE,
) -> SllnResult:
    """Measure the sup-grid distance between sample means and their limit.

    For the j-th sample size and batch b, the ensemble streams are keyed
    (j, b, i), so every batch is independent.

    Returns:
        Batch-mean errors per sample size and the least-squares slope of
        log(error) against log(M) (None when an error is exactly zero).
    """
    if n_batches < 1 or not Ms:
        raise ConfigError("need at least one sample size and one batch")
    grid = _check_grid(grid, hist.t0, t_end)
    if reference is None:
        reference = reference_mixture(
            alpha, spec, hist, t_end, cfg,
            reference_nodes=reference_nodes, method=method, max_degree=max_degree,
        )
    target = np.asarray(reference(grid), dtype=float)
    cache: dict[float, np.ndarray] | None = {} if isinstance(spec, DiscreteDelay) else None

    batch_errors = []
    for j, M in enumerate(Ms):
        errs = []
        for b in range(n_batches):
            ens = run_ensemble(
                alpha, spec, hist, t_end, M, seed, cfg, grid,
                method=method, stream_key=(j, b), max_degree=max_degree,
                solution_cache=cache,
            )
            errs.append(float(np.max(np.abs(ens.mean - target))))
        batch_errors.append(tuple(errs))
        logger.info("slln: M=%d mean error %.3e", M, float(np.mean(errs)))

    mean_errors = tuple(float(np.mean(e)) for e in batch_errors)
    slope = None
    if len(Ms) > 1 and all(e > 0 for e in mean_errors):
        slope = float(np.polyfit(np.log(Ms), np.log(mean_errors), 1)[0])
        if not math.isfinite(slope):
            slope = None

    return SllnResult(
        sample_sizes=tuple(int(m) for m in Ms),
        mean_errors=mean_errors,
        batch_errors=tuple(batch_errors),
        slope=slope,
        batches=n_batches,
        seed=seed,
    )
