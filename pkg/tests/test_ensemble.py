import math

import numpy as np
import pytest

from conftest import V_R_AT_3
from delaymix.dde_solver import SolverConfig
from delaymix.delay_model import (
    DiscreteDelay,
    ExponentialDelay,
    TabulatedDelay,
    UniformDelay,
    discretize,
)
from delaymix.distributed import build_distributed, solve_distributed
from delaymix.ensemble import (
    draw_delays,
    exact_mixture,
    numeric_mixture,
    quadrature_mixture,
    run_ensemble,
    slln_diagnostics,
    solve_single,
    tally_mixture,
)
from delaymix.errors import (
    ConfigError,
    NotContinuous,
    PositiveDelayTooSmall,
    SampleSolveError,
    ZeroDelayUnsupported,
)
from delaymix.polyexact import WeightedDelays, solve_exact

CFG = SolverConfig(0.01)


def test_draws_are_reproducible(canonical_spec):
    a = draw_delays(canonical_spec, 50, seed=9)
    b = draw_delays(canonical_spec, 50, seed=9)
    c = draw_delays(canonical_spec, 50, seed=9, stream_key=(1,))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_exact_mixture_value(canonical_spec, unit_history):
    mixture = exact_mixture(1.0, canonical_spec, unit_history, 3.0)
    assert mixture(3.0) == pytest.approx(V_R_AT_3, abs=1e-10)
    assert mixture.provenance == "discrete"
    assert mixture.nodes == (1.0, 3.0)


def test_point_mass_ensemble_has_no_spread(point_mass, unit_history):
    grid = np.linspace(0.0, 5.0, 501)
    ens = run_ensemble(1.0, point_mass, unit_history, 5.0, 25, 3, CFG, grid, method="exact")
    np.testing.assert_array_equal(ens.variance, np.zeros_like(grid))
    np.testing.assert_array_equal(ens.stderr, np.zeros_like(grid))
    assert ens.atom_counts == (25,)


def test_point_mass_collapse(point_mass, unit_history):
    grid = np.linspace(0.0, 5.0, 501)
    ens = run_ensemble(1.0, point_mass, unit_history, 5.0, 13, 1, CFG, grid, method="exact")
    mixture = exact_mixture(1.0, point_mass, unit_history, 5.0)
    distributed = solve_distributed(build_distributed(1.0, point_mass), unit_history, 5.0)

    np.testing.assert_allclose(ens.mean, mixture(grid), rtol=0, atol=1e-10)
    np.testing.assert_allclose(mixture(grid), distributed(grid), rtol=0, atol=1e-10)
    np.testing.assert_allclose(ens.mean, distributed(grid), rtol=0, atol=1e-10)


def test_numeric_ensemble_matches_exact_for_point_mass(point_mass, unit_history):
    grid = np.linspace(0.0, 5.0, 51)
    ens = run_ensemble(1.0, point_mass, unit_history, 5.0, 4, 0, CFG, grid)
    exact = solve_exact(WeightedDelays.single(1.0, 2.0), unit_history, 5.0)
    np.testing.assert_allclose(ens.mean, exact(grid), atol=1e-9)


def test_canonical_ensemble_mean_within_three_standard_errors(canonical_spec, unit_history,
                                                             grid_0_3):
    ens = run_ensemble(
        1.0, canonical_spec, unit_history, 3.0, 10_000, 20240501, CFG, grid_0_3, method="exact"
    )
    assert abs(ens.mean[-1] - V_R_AT_3) <= 3 * ens.stderr[-1]
    assert sum(ens.atom_counts) == 10_000


def test_tally_mixture_reproduces_sample_mean(canonical_spec, unit_history, grid_0_3):
    ens = run_ensemble(
        1.0, canonical_spec, unit_history, 3.0, 1000, 5, CFG, grid_0_3, method="exact"
    )
    tallied = tally_mixture(1.0, canonical_spec, unit_history, 3.0, ens.atom_counts)
    np.testing.assert_allclose(ens.mean, tallied(grid_0_3), atol=1e-10)


@pytest.mark.slow
def test_large_ensemble_sits_on_exact_mixture(canonical_spec, unit_history, grid_0_3):
    ens = run_ensemble(
        1.0, canonical_spec, unit_history, 3.0, 100_000, 8, CFG, grid_0_3, method="exact"
    )
    mixture = exact_mixture(1.0, canonical_spec, unit_history, 3.0)
    # Up to t = 1 both atoms give 1 + t, so the band there has (almost) zero width
    assert np.all(np.abs(ens.mean - mixture(grid_0_3)) <= 4 * ens.stderr + 1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_atom_frequencies_approach_probabilities(seed):
    spec = DiscreteDelay(((1.0, 0.2), (2.0, 0.3), (3.0, 0.5)))
    draws = draw_delays(spec, 10_000, seed)
    for delay, prob in spec.atoms:
        assert abs(np.mean(draws == delay) - prob) <= 0.05


def test_ensemble_is_deterministic_and_worker_independent(uniform_spec, unit_history):
    grid = np.linspace(0.0, 3.0, 31)
    kwargs = dict(method="exact", keep_samples=True)
    serial = run_ensemble(1.0, uniform_spec, unit_history, 3.0, 24, 77, CFG, grid, **kwargs)
    again = run_ensemble(1.0, uniform_spec, unit_history, 3.0, 24, 77, CFG, grid, **kwargs)
    parallel = run_ensemble(
        1.0, uniform_spec, unit_history, 3.0, 24, 77, CFG, grid, workers=2, **kwargs
    )
    for other in (again, parallel):
        np.testing.assert_array_equal(serial.mean, other.mean)
        np.testing.assert_array_equal(serial.variance, other.variance)
        np.testing.assert_array_equal(serial.samples, other.samples)
    assert serial.atom_counts is None
    np.testing.assert_allclose(serial.samples.mean(axis=0), serial.mean, atol=1e-12)
    np.testing.assert_allclose(serial.samples.var(axis=0, ddof=1), serial.variance, atol=1e-10)


def test_failed_sample_is_reported_with_its_index(unit_history):
    spec = UniformDelay(0.01, 0.02)
    with pytest.raises(SampleSolveError) as info:
        run_ensemble(1.0, spec, unit_history, 1.0, 3, 0, CFG, [0.0, 1.0])
    assert info.value.index == 0
    assert 0.01 <= info.value.delay <= 0.02


def test_failed_sample_crosses_worker_processes(unit_history):
    spec = UniformDelay(0.01, 0.02)
    with pytest.raises(SampleSolveError) as info:
        run_ensemble(1.0, spec, unit_history, 1.0, 4, 0, CFG, [0.0, 1.0], workers=2)
    assert info.value.index == 0
    assert isinstance(info.value.cause, PositiveDelayTooSmall)


def test_ensemble_rejects_bad_inputs(canonical_spec, unit_history):
    with pytest.raises(ConfigError):
        run_ensemble(1.0, canonical_spec, unit_history, 3.0, 0, 0, CFG, [0.0])
    with pytest.raises(ConfigError):
        run_ensemble(1.0, canonical_spec, unit_history, 3.0, 5, 0, CFG, [0.0, 4.0])


def test_quadrature_mixture_single_node(uniform_spec, unit_history):
    mixture = quadrature_mixture(1.0, uniform_spec, unit_history, 3.0, 1, CFG, method="exact")
    single = solve_exact(WeightedDelays.single(1.0, 2.0), unit_history, 3.0)
    t = np.linspace(0.0, 3.0, 61)
    np.testing.assert_allclose(mixture(t), single(t), atol=1e-12)
    assert mixture.provenance == "quadrature"
    assert mixture.n_nodes == 1


def test_quadrature_mixture_numeric_matches_exact(uniform_spec, unit_history):
    t = np.linspace(0.0, 3.0, 61)
    exact = quadrature_mixture(1.0, uniform_spec, unit_history, 3.0, 8, CFG, method="exact")
    numeric = quadrature_mixture(1.0, uniform_spec, unit_history, 3.0, 8, CFG)
    np.testing.assert_allclose(numeric(t), exact(t), atol=1e-9)
    assert numeric.derivative(2.5) == pytest.approx(exact.derivative(2.5), abs=1e-6)


def test_quadrature_mixture_self_convergence(uniform_spec, unit_history):
    t = np.linspace(0.0, 3.0, 61)
    n32 = quadrature_mixture(1.0, uniform_spec, unit_history, 3.0, 32, CFG, method="exact")
    n64 = quadrature_mixture(1.0, uniform_spec, unit_history, 3.0, 64, CFG, method="exact")
    assert np.max(np.abs(n32(t) - n64(t))) <= 1e-5


def test_quadrature_mixture_needs_continuous_law(canonical_spec, unit_history):
    with pytest.raises(NotContinuous):
        quadrature_mixture(1.0, canonical_spec, unit_history, 3.0, 4, CFG)


def test_numeric_mixture_with_zero_delay_atom(unit_history):
    spec = DiscreteDelay(((0.0, 0.5), (1.0, 0.5)))
    mixture = numeric_mixture(1.0, spec, unit_history, 1.0, CFG)
    assert mixture(1.0) == pytest.approx(0.5 * math.e + 0.5 * 2.0, rel=1e-8)


@pytest.mark.slow
def test_quadrature_mixture_agrees_with_monte_carlo(uniform_spec, unit_history):
    grid = np.linspace(0.0, 3.0, 61)
    ens = run_ensemble(1.0, uniform_spec, unit_history, 3.0, 10_000, 314, CFG, grid,
                       method="exact")
    mixture = quadrature_mixture(1.0, uniform_spec, unit_history, 3.0, 32, CFG, method="exact")
    gap = np.abs(ens.mean - mixture(grid))
    # The floor covers the quadrature error near t = 1, where the band is thin
    assert np.all(gap <= 3 * ens.stderr + 1e-5)


@pytest.mark.slow
def test_sample_mean_error_decays_like_inverse_square_root(canonical_spec, unit_history,
                                                           grid_0_3):
    result = slln_diagnostics(
        1.0, canonical_spec, unit_history, 3.0, [100, 1000, 10_000], 20, 2024, CFG, grid_0_3,
        method="exact",
    )
    assert result.slope is not None
    assert -0.65 <= result.slope <= -0.35
    assert result.mean_errors[0] > result.mean_errors[-1]
    assert [m for m, _ in result.table] == [100, 1000, 10_000]


def test_slln_diagnostics_with_continuous_law(uniform_spec, unit_history):
    grid = np.linspace(0.0, 3.0, 16)
    reference = quadrature_mixture(1.0, uniform_spec, unit_history, 3.0, 16, CFG,
                                   method="exact")
    result = slln_diagnostics(
        1.0, uniform_spec, unit_history, 3.0, [10, 40], 3, 1, CFG, grid,
        reference=reference, method="exact",
    )
    assert len(result.batch_errors) == 2
    assert all(len(b) == 3 for b in result.batch_errors)
    assert all(e >= 0 for e in result.mean_errors)


def test_discretized_weights_drive_the_mixture(uniform_spec, unit_history):
    atoms = discretize(uniform_spec, 4)
    mixture = quadrature_mixture(1.0, uniform_spec, unit_history, 3.0, 4, CFG, method="exact")
    assert mixture.nodes == tuple(d for d, _ in atoms)
    assert mixture.weights == tuple(w for _, w in atoms)


def test_exact_single_solve_refuses_zero_delay(unit_history):
    with pytest.raises(ZeroDelayUnsupported):
        solve_single(1.0, 0.0, unit_history, 1.0, CFG, "exact")
    ode = solve_single(1.0, 0.0, unit_history, 1.0, CFG)
    assert ode(1.0) == pytest.approx(math.e, rel=1e-8)


def test_zero_atom_under_exact_ensemble_is_reported(unit_history):
    spec = DiscreteDelay(((0.0, 0.5), (1.0, 0.5)))
    with pytest.raises(SampleSolveError) as info:
        run_ensemble(1.0, spec, unit_history, 1.0, 50, 0, CFG, [0.0, 1.0], method="exact")
    assert info.value.delay == 0.0
    assert isinstance(info.value.cause, ZeroDelayUnsupported)


def test_tabulated_quadrature_mixture(unit_history):
    table = TabulatedDelay((0.0, 0.5, 1.0), (1.0, 1.5, 3.0))
    t = np.linspace(0.0, 3.0, 61)
    exact = quadrature_mixture(1.0, table, unit_history, 3.0, 8, CFG, method="exact")
    numeric = quadrature_mixture(1.0, table, unit_history, 3.0, 8, CFG)
    np.testing.assert_allclose(numeric(t), exact(t), atol=1e-9)
    assert exact(1.0) == pytest.approx(2.0, abs=1e-12)
    assert exact.truncation_eps == table.truncation_eps


def test_exponential_quadrature_mixture_with_short_nodes(unit_history):
    spec = ExponentialDelay(1.0)
    t = np.linspace(0.0, 2.0, 41)
    exact = quadrature_mixture(1.0, spec, unit_history, 2.0, 32, CFG, method="exact")
    numeric = quadrature_mixture(1.0, spec, unit_history, 2.0, 32, SolverConfig(0.0025))
    assert min(exact.nodes) < 0.02
    np.testing.assert_allclose(numeric(t), exact(t), rtol=1e-7)
    assert np.all(exact(t) <= np.exp(t) + 1e-12)
