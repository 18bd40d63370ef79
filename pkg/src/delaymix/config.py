"""Run configuration: one JSON document describing a problem and its pipelines.

See docs/config_schema.md for the schema. ``load_config`` rebuilds the typed
delay and history specs and revalidates every invariant, so a RunConfig that
exists is a valid one.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal

from delaymix.delay_model import (
    DEFAULT_TRUNCATION_EPS,
    ConstantHistory,
    DelaySpec,
    DiscreteDelay,
    ExponentialDelay,
    HistorySpec,
    PiecewiseHistory,
    PolynomialHistory,
    TabulatedDelay,
    UniformDelay,
    is_continuous,
    validate,
    validate_history,
)
from delaymix.errors import ConfigError
from delaymix.polyexact import DEFAULT_MAX_BREAKPOINTS, DEFAULT_MAX_DEGREE

logger = logging.getLogger(__name__)

MethodChoice = Literal["auto", "exact", "numeric"]


@dataclass(frozen=True)
class SllnSettings:
    sample_sizes: tuple[int, ...] = (100, 1000, 10000)
    batches: int = 20
    reference_nodes: int = 256


@dataclass(frozen=True)
class OutputSettings:
    dir: str = "results"
    prefix: str = ""

    def path(self, name: str) -> Path:
        return Path(self.dir) / f"{self.prefix}{name}"


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs.

    Attributes:
        alpha: Growth coefficient.
        delay: Law of the delay.
        history: History function; its ``t0`` is the initial time.
        t_end: Final time.
        step: RK4 step size.
        grid_step: Spacing of the output grid.
        seed: Master seed for every random stream.
        samples: Ensemble size M.
        n_nodes: Quadrature nodes for continuous laws.
        max_degree: Degree guard of the exact solver.
        max_breakpoints: Breakpoint budget; ``auto`` switches to the numerical
            solver past it, ``exact`` fails.
        tol: Divergence threshold for comparisons.
        workers: Processes for ensemble solves.
        method: Solver choice; ``auto`` picks exact when every delay is positive.
        slln: Convergence-study settings.
        output: Where result files go.
    """

    alpha: float
    delay: DelaySpec
    history: HistorySpec
    t_end: float
    step: float = 0.01
    grid_step: float = 0.01
    seed: int = 0
    samples: int = 1000
    n_nodes: int | None = None
    max_degree: int = DEFAULT_MAX_DEGREE
    max_breakpoints: int = DEFAULT_MAX_BREAKPOINTS
    tol: float = 1e-9
    workers: int = 1
    method: MethodChoice = "auto"
    slln: SllnSettings = field(default_factory=SllnSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    def __post_init__(self) -> None:
        validate(self.delay)
        validate_history(self.history)
        if not math.isfinite(self.alpha):
            raise ConfigError(f"alpha must be finite, got {self.alpha}")
        if not self.t_end > self.t0:
            raise ConfigError(f"t_end={self.t_end} must exceed t0={self.t0}")
        for name in ("step", "grid_step"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")
        if self.samples < 1:
            raise ConfigError(f"samples must be positive, got {self.samples}")
        if self.n_nodes is not None and self.n_nodes < 1:
            raise ConfigError(f"n_nodes must be positive, got {self.n_nodes}")
        if min(self.max_degree, self.max_breakpoints, self.workers) < 1:
            raise ConfigError("max_degree, max_breakpoints and workers must be positive")
        if not self.tol >= 0:
            raise ConfigError(f"tol must be nonnegative, got {self.tol}")
        if self.method not in ("auto", "exact", "numeric"):
            raise ConfigError(f"unknown method {self.method!r}")
        if not self.slln.sample_sizes or min(self.slln.sample_sizes) < 1:
            raise ConfigError("slln.sample_sizes must be a nonempty list of positive sizes")
        if self.slln.batches < 1 or self.slln.reference_nodes < 1:
            raise ConfigError("slln.batches and slln.reference_nodes must be positive")

    @property
    def t0(self) -> float:
        return self.history.t0

    def grid(self) -> list[float]:
        """Output grid t0, t0 + grid_step, ..., ending exactly at t_end."""
        n = int(math.floor((self.t_end - self.t0) / self.grid_step + 1e-9))
        points = [self.t0 + k * self.grid_step for k in range(n + 1)]
        if self.t_end - points[-1] > 1e-9:
            points.append(self.t_end)
        else:
            points[-1] = self.t_end
        return points

    def with_overrides(
        self,
        *,
        seed: int | None = None,
        output_dir: str | None = None,
        workers: int | None = None,
    ) -> RunConfig:
        changes: dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = seed
        if workers is not None:
            changes["workers"] = workers
        if output_dir is not None:
            changes["output"] = replace(self.output, dir=output_dir)
        return replace(self, **changes) if changes else self

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "delay": _delay_to_dict(self.delay),
            "history": _history_to_dict(self.history),
            "t0": self.t0,
            "t_end": self.t_end,
            "step": self.step,
            "grid_step": self.grid_step,
            "seed": self.seed,
            "samples": self.samples,
            "n_nodes": self.n_nodes,
            "max_degree": self.max_degree,
            "max_breakpoints": self.max_breakpoints,
            "tol": self.tol,
            "workers": self.workers,
            "method": self.method,
            "slln": {
                "sample_sizes": list(self.slln.sample_sizes),
                "batches": self.slln.batches,
                "reference_nodes": self.slln.reference_nodes,
            },
            "output": {"dir": self.output.dir, "prefix": self.output.prefix},
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        """Build and validate a RunConfig from a parsed document.

        Raises:
            ConfigError: On missing keys, wrong types, or violated invariants.
        """
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {
            "alpha", "delay", "history", "t0", "t_end", "step", "grid_step", "seed",
            "samples", "n_nodes", "truncation_eps", "max_degree", "max_breakpoints", "tol",
            "workers", "method", "slln", "output",
        }
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        for key in ("alpha", "delay", "history", "t_end"):
            if key not in data:
                raise ConfigError(f"missing required key {key!r}")

        try:
            t0 = float(data.get("t0", 0.0))
            eps = float(data.get("truncation_eps", DEFAULT_TRUNCATION_EPS))
            slln = data.get("slln", {})
            output = data.get("output", {})
            n_nodes = data.get("n_nodes")
            return cls(
                alpha=float(data["alpha"]),
                delay=_delay_from_dict(data["delay"], eps),
                history=_history_from_dict(data["history"], t0),
                t_end=float(data["t_end"]),
                step=float(data.get("step", 0.01)),
                grid_step=float(data.get("grid_step", 0.01)),
                seed=_as_int(data.get("seed", 0), "seed"),
                samples=_as_int(data.get("samples", 1000), "samples"),
                n_nodes=None if n_nodes is None else _as_int(n_nodes, "n_nodes"),
                max_degree=_as_int(data.get("max_degree", DEFAULT_MAX_DEGREE), "max_degree"),
                max_breakpoints=_as_int(
                    data.get("max_breakpoints", DEFAULT_MAX_BREAKPOINTS), "max_breakpoints"
                ),
                tol=float(data.get("tol", 1e-9)),
                workers=_as_int(data.get("workers", 1), "workers"),
                method=data.get("method", "auto"),
                slln=SllnSettings(
                    sample_sizes=tuple(
                        _as_int(m, "slln.sample_sizes")
                        for m in slln.get("sample_sizes", SllnSettings.sample_sizes)
                    ),
                    batches=_as_int(slln.get("batches", 20), "slln.batches"),
                    reference_nodes=_as_int(
                        slln.get("reference_nodes", 256), "slln.reference_nodes"
                    ),
                ),
                output=OutputSettings(
                    dir=str(output.get("dir", "results")),
                    prefix=str(output.get("prefix", "")),
                ),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError, AttributeError) as exc:
            raise ConfigError(f"malformed configuration: {exc}") from exc


def _as_int(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int | float) or value != int(value):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return int(value)


def _delay_from_dict(block: dict[str, Any], default_eps: float) -> DelaySpec:
    kind = block.get("kind")
    eps = float(block.get("truncation_eps", default_eps))
    if kind == "discrete":
        return DiscreteDelay(tuple((float(d), float(p)) for d, p in block["atoms"]))
    if kind == "uniform":
        return UniformDelay(float(block["a"]), float(block["b"]), eps)
    if kind == "exponential":
        return ExponentialDelay(float(block["rate"]), eps)
    if kind == "tabulated":
        return TabulatedDelay(tuple(block["probs"]), tuple(block["quantiles"]), eps)
    raise ConfigError(f"unknown delay kind {kind!r}")


def _delay_to_dict(spec: DelaySpec) -> dict[str, Any]:
    if isinstance(spec, DiscreteDelay):
        return {"kind": "discrete", "atoms": [[d, p] for d, p in spec.atoms]}
    if isinstance(spec, UniformDelay):
        out: dict[str, Any] = {"kind": "uniform", "a": spec.a, "b": spec.b}
    elif isinstance(spec, ExponentialDelay):
        out = {"kind": "exponential", "rate": spec.rate}
    else:
        out = {"kind": "tabulated", "probs": list(spec.probs), "quantiles": list(spec.quantiles)}
    if is_continuous(spec):
        out["truncation_eps"] = spec.truncation_eps
    return out


def _history_from_dict(block: dict[str, Any], t0: float) -> HistorySpec:
    kind = block.get("kind")
    if kind == "constant":
        return ConstantHistory(float(block["value"]), t0)
    if kind == "polynomial":
        return PolynomialHistory(tuple(block["coeffs"]), t0)
    if kind == "piecewise":
        return PiecewiseHistory(
            tuple(block["breakpoints"]), tuple(tuple(c) for c in block["coeffs"]), t0
        )
    raise ConfigError(f"unknown history kind {kind!r}")


def _history_to_dict(hist: HistorySpec) -> dict[str, Any]:
    if isinstance(hist, ConstantHistory):
        return {"kind": "constant", "value": hist.value}
    if isinstance(hist, PolynomialHistory):
        return {"kind": "polynomial", "coeffs": list(hist.coeffs)}
    return {
        "kind": "piecewise",
        "breakpoints": list(hist.breakpoints),
        "coeffs": [list(c) for c in hist.coeffs],
    }


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a configuration file.

    Raises:
        ConfigError: If the file is unreadable, not JSON, or invalid.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    cfg = RunConfig.from_dict(data)
    logger.info("loaded configuration from %s", path)
    return cfg


def dump_config(cfg: RunConfig, path: str | Path) -> Path:
    """Write a configuration that ``load_config`` turns back into ``cfg``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path
