import csv
import json
import math
from itertools import pairwise

import pytest

from delaymix import __version__
from delaymix.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from delaymix.config import load_config

CANONICAL = {
    "alpha": 1.0,
    "delay": {"kind": "discrete", "atoms": [[1.0, 0.5], [3.0, 0.5]]},
    "history": {"kind": "constant", "value": 1.0},
    "t_end": 3.0,
    "step": 0.01,
    "grid_step": 0.01,
    "seed": 17,
    "samples": 200,
}

EXPONENTIAL = {
    **CANONICAL,
    "delay": {"kind": "exponential", "rate": 1.0, "truncation_eps": 1e-6},
    "n_nodes": 32,
    "t_end": 2.0,
    "step": 0.0025,
    "grid_step": 0.25,
}


def _write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def _run(tmp_path, data, *command):
    cfg = _write(tmp_path, data)
    out = tmp_path / "out"
    code = main(["--config", str(cfg), "--output-dir", str(out), *command])
    return code, out


def _rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_solve_single_delay(tmp_path):
    code, out = _run(tmp_path, CANONICAL, "solve", "--delay", "1")
    assert code == EXIT_OK
    rows = _rows(out / "solve.csv")
    assert len(rows) == 301
    assert rows[-1]["t"] == "3"
    assert float(rows[-1]["value"]) == pytest.approx(37 / 6, abs=1e-10)


def test_solve_with_zero_alpha_is_constant(tmp_path):
    code, out = _run(tmp_path, {**CANONICAL, "alpha": 0.0}, "solve", "--delay", "1")
    assert code == EXIT_OK
    assert {row["value"] for row in _rows(out / "solve.csv")} == {"1"}


def test_step_too_large_exits_with_solver_error(tmp_path, capsys):
    data = {**CANONICAL, "step": 0.5, "method": "numeric"}
    code, _ = _run(tmp_path, data, "solve", "--delay", "1")
    assert code == EXIT_SOLVER
    assert "PositiveDelayTooSmall" in capsys.readouterr().err


def test_invalid_config_exits_with_config_error(tmp_path, capsys):
    data = {**CANONICAL, "delay": {"kind": "discrete", "atoms": [[1.0, 0.5], [3.0, 0.4]]}}
    code, _ = _run(tmp_path, data, "mixture")
    assert code == EXIT_CONFIG
    assert "error: ProbSumMismatch" in capsys.readouterr().err


def test_missing_config_file_exits_with_config_error(tmp_path):
    assert main(["--config", str(tmp_path / "nope.json"), "mixture"]) == EXIT_CONFIG


def test_ensemble_point_mass_has_zero_stderr(tmp_path):
    data = {**CANONICAL, "delay": {"kind": "discrete", "atoms": [[2.0, 1.0]]}, "samples": 30}
    code, out = _run(tmp_path, data, "ensemble")
    assert code == EXIT_OK
    assert {float(row["stderr"]) for row in _rows(out / "ensemble.csv")} == {0.0}
    sidecar = json.loads((out / "ensemble.json").read_text(encoding="utf-8"))
    assert sidecar["seed"] == 17
    assert sidecar["samples"] == 30
    assert sidecar["version"] == __version__


def test_seed_override_is_echoed(tmp_path):
    cfg = _write(tmp_path, CANONICAL)
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--output-dir", str(out), "--seed", "5", "ensemble"]) == 0
    sidecar = json.loads((out / "ensemble.json").read_text(encoding="utf-8"))
    assert sidecar["seed"] == 5
    assert sidecar["config"]["seed"] == 5


def test_canonical_ensemble_mean(tmp_path):
    code, out = _run(tmp_path, {**CANONICAL, "samples": 10_000}, "ensemble")
    assert code == EXIT_OK
    last = _rows(out / "ensemble.csv")[-1]
    assert abs(float(last["mean"]) - 61 / 12) <= 3 * float(last["stderr"])


def test_reruns_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, CANONICAL)
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        assert main(["--config", str(cfg), "--output-dir", str(out), "ensemble",
                     "--dump-samples"]) == EXIT_OK
    for name in ("ensemble.csv", "ensemble.json", "samples.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_sidecar_config_omits_output_location(tmp_path):
    code, out = _run(tmp_path, CANONICAL, "ensemble")
    assert code == EXIT_OK
    sidecar = json.loads((out / "ensemble.json").read_text(encoding="utf-8"))
    assert "output" not in sidecar["config"]
    assert sidecar["config"]["seed"] == 17


def test_compare_canonical(tmp_path):
    code, out = _run(tmp_path, CANONICAL, "compare")
    assert code == EXIT_OK
    report = json.loads((out / "compare.json").read_text(encoding="utf-8"))
    assert report["sup_diff"] == pytest.approx(1 / 24, abs=1e-9)
    assert 2.0 < report["first_divergence"] <= 3.0
    assert report["agreement_window_end"] == 2.0
    assert report["version"] == __version__
    rows = _rows(out / "compare.csv")
    assert list(rows[0]) == ["t", "vR", "vD", "absdiff"]
    assert float(rows[-1]["absdiff"]) == pytest.approx(1 / 24, abs=1e-9)


def test_compare_point_mass(tmp_path):
    data = {**CANONICAL, "delay": {"kind": "discrete", "atoms": [[2.0, 1.0]]}, "t_end": 5.0}
    code, out = _run(tmp_path, data, "compare", "--with-ensemble")
    assert code == EXIT_OK
    report = json.loads((out / "compare.json").read_text(encoding="utf-8"))
    assert report["first_divergence"] is None
    assert set(report["ensemble"]["stderr"]) == {0.0}


def test_compare_uniform_reports_quadrature(tmp_path):
    data = {**CANONICAL, "delay": {"kind": "uniform", "a": 1.0, "b": 3.0}, "n_nodes": 32,
            "grid_step": 0.05}
    code, out = _run(tmp_path, data, "compare")
    assert code == EXIT_OK
    report = json.loads((out / "compare.json").read_text(encoding="utf-8"))
    assert report["provenance"] == {"kind": "quadrature", "n_nodes": 32,
                                    "truncation_eps": 1e-6}


def test_continuous_law_without_nodes_is_a_config_error(tmp_path, capsys):
    data = {**CANONICAL, "delay": {"kind": "uniform", "a": 1.0, "b": 3.0}}
    code, _ = _run(tmp_path, data, "distributed")
    assert code == EXIT_CONFIG
    assert "MissingNodeCount" in capsys.readouterr().err


def test_outputs_share_the_grid(tmp_path):
    cfg = _write(tmp_path, CANONICAL)
    out = tmp_path / "out"
    for command in ("mixture", "distributed", "ensemble"):
        assert main(["--config", str(cfg), "--output-dir", str(out), command]) == EXIT_OK
    columns = [
        [row["t"] for row in _rows(out / name)]
        for name in ("mixture.csv", "distributed.csv", "ensemble.csv")
    ]
    assert columns[0] == columns[1] == columns[2]
    assert float(_rows(out / "mixture.csv")[-1]["value"]) == pytest.approx(61 / 12, abs=1e-10)
    assert float(_rows(out / "distributed.csv")[-1]["value"]) == pytest.approx(
        121 / 24, abs=1e-10
    )


def test_slln_command(tmp_path):
    data = {**CANONICAL, "slln": {"sample_sizes": [10, 100], "batches": 3}}
    code, out = _run(tmp_path, data, "slln")
    assert code == EXIT_OK
    rows = _rows(out / "slln.csv")
    assert [row["M"] for row in rows] == ["10", "100"]
    summary = json.loads((out / "slln.json").read_text(encoding="utf-8"))
    assert summary["batches"] == 3
    assert summary["seed"] == 17


def test_dump_config_round_trip(tmp_path):
    cfg = _write(tmp_path, CANONICAL)
    dumped = tmp_path / "effective.json"
    assert main(["--config", str(cfg), "--workers", "2", "--dump-config", str(dumped)]) == 0
    reloaded = load_config(dumped)
    assert reloaded == load_config(cfg).with_overrides(workers=2)
    again = tmp_path / "again.json"
    assert main(["--config", str(dumped), "--dump-config", str(again)]) == 0
    assert load_config(again) == reloaded


def test_command_is_required_without_dump(tmp_path):
    cfg = _write(tmp_path, CANONICAL)
    with pytest.raises(SystemExit):
        main(["--config", str(cfg)])


def test_short_quadrature_delays_fall_back_to_numeric(tmp_path, caplog):
    code, out = _run(tmp_path, EXPONENTIAL, "distributed")
    assert code == EXIT_OK
    assert "using the numerical solver" in caplog.text
    values = [float(row["value"]) for row in _rows(out / "distributed.csv")]
    assert len(values) == 9
    assert values[0] == 1.0
    assert all(b > a for a, b in pairwise(values))
    assert values[-1] < math.exp(2.0)


def test_forced_exact_over_breakpoint_budget_is_a_solver_error(tmp_path, capsys):
    code, _ = _run(tmp_path, {**EXPONENTIAL, "method": "exact"}, "distributed")
    assert code == EXIT_SOLVER
    assert "BreakpointLimitExceeded" in capsys.readouterr().err


def test_breakpoint_budget_is_configurable(tmp_path, capsys):
    data = {**CANONICAL, "method": "exact", "max_breakpoints": 2}
    code, _ = _run(tmp_path, data, "distributed")
    assert code == EXIT_SOLVER
    assert "BreakpointLimitExceeded" in capsys.readouterr().err
    code, out = _run(tmp_path, {**data, "method": "auto"}, "distributed")
    assert code == EXIT_OK
    assert float(_rows(out / "distributed.csv")[-1]["value"]) == pytest.approx(121 / 24, abs=1e-8)


def test_forced_exact_solve_with_zero_delay_is_a_solver_error(tmp_path, capsys):
    code, _ = _run(tmp_path, CANONICAL, "solve", "--delay", "0", "--exact")
    assert code == EXIT_SOLVER
    assert "ZeroDelayUnsupported" in capsys.readouterr().err


def test_zero_delay_solve_without_exact_flag_uses_rk4(tmp_path):
    code, out = _run(tmp_path, {**CANONICAL, "t_end": 1.0}, "solve", "--delay", "0")
    assert code == EXIT_OK
    assert float(_rows(out / "solve.csv")[-1]["value"]) == pytest.approx(math.e, rel=1e-8)
