"""Command-line interface.

Usage:
    delaymix --config configs/canonical.json solve --delay 1
    delaymix --config configs/canonical.json ensemble --dump-samples
    delaymix --config configs/canonical.json mixture
    delaymix --config configs/canonical.json distributed
    delaymix --config configs/canonical.json compare --with-ensemble
    delaymix --config configs/canonical.json slln
    delaymix --config configs/canonical.json --dump-config effective.json

Every command evaluates on the grid t0, t0 + grid_step, ..., t_end, so CSV
files produced from one config join on their ``t`` column. Exit codes: 0 on
success, 2 for configuration errors, 3 for solver failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from typing import TYPE_CHECKING, Any

import numpy as np

from delaymix import __version__
from delaymix.compare import compare
from delaymix.config import RunConfig, dump_config, load_config
from delaymix.dde_solver import SolverConfig
from delaymix.delay_model import DiscreteDelay, discretize
from delaymix.distributed import build_distributed, solve_distributed
from delaymix.ensemble import (
    exact_mixture,
    numeric_mixture,
    quadrature_mixture,
    run_ensemble,
    slln_diagnostics,
    solve_single,
)
from delaymix.errors import BreakpointLimitExceeded, ConfigError, SolverError
from delaymix.polyexact import breakpoints, history_origins

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence
    from pathlib import Path

    from delaymix.dde_solver import Trajectory
    from delaymix.distributed import DistributedProblem
    from delaymix.ensemble import EnsembleResult, Method, MixtureResult
    from delaymix.polyexact import PiecewisePoly

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


# =============================================================================
# Output helpers
# =============================================================================


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[float]]) -> Path:
    """Write numeric rows with 17 significant digits and '.' decimals."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    logger.info("wrote %s", path)
    return path


def write_json(path: Path, payload: dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("wrote %s", path)
    return path


def _envelope(cfg: RunConfig, **fields: Any) -> dict[str, Any]:
    # Where the files went is not part of the result
    config = cfg.to_dict()
    del config["output"]
    return {"version": __version__, "config": config, **fields}


# =============================================================================
# Pipelines shared by the commands
# =============================================================================


def _resolve(cfg: RunConfig, delays: Iterable[float], *, coupled: bool = True) -> Method:
    """Pick the solver for the given delays.

    ``auto`` means exact whenever every delay is positive and the propagated
    breakpoints fit in ``cfg.max_breakpoints``.

    Args:
        cfg: Run configuration.
        delays: Delays to be solved for.
        coupled: True if the delays share one equation (the distributed
            model), False if each is solved on its own (mixtures, ensembles).

    Raises:
        ConfigError: If ``exact`` is configured and some delay is zero.
        BreakpointLimitExceeded: If ``exact`` is configured and the budget is exceeded.
    """
    if cfg.method == "numeric":
        return "numeric"
    delays = [float(d) for d in delays]
    positive = all(d > 0 for d in delays)
    if cfg.method == "exact" and not positive:
        raise ConfigError("method 'exact' needs every delay to be positive")
    if not positive:
        return "numeric"
    groups = [delays] if coupled else [[d] for d in delays]
    try:
        for group in groups:
            breakpoints(
                group, cfg.t0, cfg.t_end, history_origins(cfg.history, group),
                max_points=cfg.max_breakpoints,
            )
    except BreakpointLimitExceeded as exc:
        if cfg.method == "exact":
            raise
        logger.warning("%s; using the numerical solver", exc)
        return "numeric"
    return "exact"


def _sample_method(cfg: RunConfig) -> Method:
    """Solver for per-sample solves; a discrete law is resolved over its atoms."""
    if isinstance(cfg.delay, DiscreteDelay):
        return _resolve(cfg, [d for d, _ in cfg.delay.atoms], coupled=False)
    return "numeric" if cfg.method == "numeric" else "exact"


def build_mixture(cfg: RunConfig) -> MixtureResult:
    """v_R for the configured law: exact for discrete laws, quadrature otherwise."""
    solver = SolverConfig(cfg.step)
    spec = cfg.delay
    if isinstance(spec, DiscreteDelay):
        if _sample_method(cfg) == "exact":
            return exact_mixture(
                cfg.alpha, spec, cfg.history, cfg.t_end, max_degree=cfg.max_degree
            )
        return numeric_mixture(cfg.alpha, spec, cfg.history, cfg.t_end, solver)
    nodes = [d for d, _ in discretize(spec, cfg.n_nodes)]
    return quadrature_mixture(
        cfg.alpha, spec, cfg.history, cfg.t_end, cfg.n_nodes, solver,
        method=_resolve(cfg, nodes, coupled=False), max_degree=cfg.max_degree,
    )


def build_distributed_solution(
    cfg: RunConfig,
) -> tuple[DistributedProblem, PiecewisePoly | Trajectory]:
    problem = build_distributed(cfg.alpha, cfg.delay, cfg.n_nodes)
    mode = _resolve(cfg, problem.delays)
    sol = solve_distributed(
        problem, cfg.history, cfg.t_end, mode, SolverConfig(cfg.step),
        max_degree=cfg.max_degree, max_breakpoints=cfg.max_breakpoints,
    )
    return problem, sol


def build_ensemble(cfg: RunConfig, keep_samples: bool = False) -> EnsembleResult:
    return run_ensemble(
        cfg.alpha, cfg.delay, cfg.history, cfg.t_end, cfg.samples, cfg.seed,
        SolverConfig(cfg.step), cfg.grid(),
        method=_sample_method(cfg), keep_samples=keep_samples, workers=cfg.workers,
        max_degree=cfg.max_degree,
    )


# =============================================================================
# Commands
# =============================================================================


def cmd_solve(cfg: RunConfig, args: argparse.Namespace) -> int:
    """Solve the equation with one fixed delay and write (t, value)."""
    delay = args.delay
    if delay is None:
        if not (isinstance(cfg.delay, DiscreteDelay) and cfg.delay.is_point_mass):
            raise ConfigError("solve needs --delay unless the configured law is a point mass")
        delay = cfg.delay.atoms[0][0]
    if delay < 0:
        raise ConfigError(f"--delay must be nonnegative, got {delay}")
    method: Method = "exact" if args.exact else _resolve(cfg, [delay])
    sol = solve_single(
        cfg.alpha, delay, cfg.history, cfg.t_end, SolverConfig(cfg.step), method,
        cfg.max_degree, max_breakpoints=cfg.max_breakpoints,
    )
    grid = np.asarray(cfg.grid())
    rows = zip(grid, sol(grid), strict=True)
    write_csv(cfg.output.path("solve.csv"), ["t", "value"], rows)
    logger.info("solve: delay %g, %s method, u(t_end) = %.12g", delay, method, sol(cfg.t_end))
    return EXIT_OK


def cmd_ensemble(cfg: RunConfig, args: argparse.Namespace) -> int:
    """Monte Carlo mean with variance and standard error, plus a JSON sidecar."""
    ens = build_ensemble(cfg, keep_samples=args.dump_samples)
    write_csv(
        cfg.output.path("ensemble.csv"),
        ["t", "mean", "variance", "stderr"],
        zip(ens.grid, ens.mean, ens.variance, ens.stderr, strict=True),
    )
    sidecar = _envelope(
        cfg,
        seed=ens.seed,
        samples=ens.M,
        atom_counts=list(ens.atom_counts) if ens.atom_counts is not None else None,
    )
    write_json(cfg.output.path("ensemble.json"), sidecar)
    if ens.samples is not None:
        header = ["delay", *(_fmt(t) for t in ens.grid)]
        write_csv(
            cfg.output.path("samples.csv"),
            header,
            ([d, *row] for d, row in zip(ens.delays, ens.samples, strict=True)),
        )
    return EXIT_OK


def cmd_mixture(cfg: RunConfig, args: argparse.Namespace) -> int:
    mixture = build_mixture(cfg)
    grid = np.asarray(cfg.grid())
    rows = zip(grid, mixture(grid), strict=True)
    write_csv(cfg.output.path("mixture.csv"), ["t", "value"], rows)
    return EXIT_OK


def cmd_distributed(cfg: RunConfig, args: argparse.Namespace) -> int:
    _, sol = build_distributed_solution(cfg)
    grid = np.asarray(cfg.grid())
    rows = zip(grid, sol(grid), strict=True)
    write_csv(cfg.output.path("distributed.csv"), ["t", "value"], rows)
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args: argparse.Namespace) -> int:
    """Contrast v_R and v_D; write the JSON report and (t, vR, vD, absdiff)."""
    mixture = build_mixture(cfg)
    _, sol = build_distributed_solution(cfg)
    report = compare(mixture, sol, cfg.grid(), cfg.tol)

    payload = _envelope(cfg, **report.to_dict())
    if args.with_ensemble:
        ens = build_ensemble(cfg)
        payload["ensemble"] = {
            "seed": ens.seed,
            "samples": ens.M,
            "mean": ens.mean.tolist(),
            "stderr": ens.stderr.tolist(),
        }
    write_json(cfg.output.path("compare.json"), payload)
    write_csv(
        cfg.output.path("compare.csv"),
        ["t", "vR", "vD", "absdiff"],
        zip(report.grid, report.vR, report.vD, report.absdiff, strict=True),
    )
    logger.info("compare: sup_diff %.6g, first divergence %s", report.sup_diff,
                report.first_divergence)
    return EXIT_OK


def cmd_slln(cfg: RunConfig, args: argparse.Namespace) -> int:
    """Error of the sample mean against its limit for growing sample sizes."""
    method = _sample_method(cfg)
    reference = build_mixture(cfg) if isinstance(cfg.delay, DiscreteDelay) else None
    result = slln_diagnostics(
        cfg.alpha, cfg.delay, cfg.history, cfg.t_end,
        cfg.slln.sample_sizes, cfg.slln.batches, cfg.seed,
        SolverConfig(cfg.step), cfg.grid(),
        reference=reference, reference_nodes=cfg.slln.reference_nodes,
        method=method, max_degree=cfg.max_degree,
    )
    write_csv(cfg.output.path("slln.csv"), ["M", "mean_error"], result.table)
    write_json(
        cfg.output.path("slln.json"),
        _envelope(cfg, slope=result.slope, batches=result.batches, seed=result.seed),
    )
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "ensemble": cmd_ensemble,
    "mixture": cmd_mixture,
    "distributed": cmd_distributed,
    "compare": cmd_compare,
    "slln": cmd_slln,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delaymix",
        description="Compare averaged solutions and averaged models of random-delay equations",
    )
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="Override the configured seed")
    parser.add_argument("--output-dir", default=None, help="Override the output directory")
    parser.add_argument("--workers", type=int, default=None,
                        help="Processes for ensemble solves")
    parser.add_argument("--dump-config", default=None, metavar="PATH",
                        help="Write the effective configuration to PATH")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for solver details")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    sub = parser.add_subparsers(dest="command")
    solve = sub.add_parser("solve", help="Solve with one fixed delay")
    solve.add_argument("--delay", type=float, default=None, help="The delay (default: point mass)")
    solve.add_argument("--exact", action="store_true", help="Force the exact solver")

    ensemble = sub.add_parser("ensemble", help="Monte Carlo mean of sampled solutions")
    ensemble.add_argument("--dump-samples", action="store_true",
                          help="Also write every sample's grid values")

    sub.add_parser("mixture", help="Limit of the sample mean")
    sub.add_parser("distributed", help="Solve the distributed delay equation")

    comp = sub.add_parser("compare", help="Compare the mixture with the distributed solution")
    comp.add_argument("--with-ensemble", action="store_true",
                      help="Attach an ensemble mean and its standard error")

    sub.add_parser("slln", help="Convergence of the sample mean")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )

    if args.command is None and args.dump_config is None:
        parser.error("a command is required unless --dump-config is given")

    try:
        cfg = load_config(args.config).with_overrides(
            seed=args.seed, output_dir=args.output_dir, workers=args.workers
        )
        if args.dump_config is not None:
            dump_config(cfg, args.dump_config)
        if args.command is None:
            return EXIT_OK
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
