import csv

import pytest

from config import Config
from particle_planning.cli import BOUNDS_FIELDS, EXPERIMENT_FIELDS, LOWERBOUND_FIELDS, SWEEP_FIELDS, main
from particle_planning.presets import PRESETS


@pytest.fixture(autouse=True)
def isolated_dirs(tmp_path, monkeypatch):
    monkeypatch.setattr(Config, "LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setattr(Config, "OUTPUT_DIR", str(tmp_path / "results"))
    return tmp_path


def _read(path):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        return reader.fieldnames, list(reader)


def test_dump_preset(capsys):
    assert main(["--dump-preset", "lowerbound"]) == 0
    assert capsys.readouterr().out == PRESETS["lowerbound"]


def test_dump_default_preset_and_alias(capsys):
    assert main(["--dump-preset", "appendix-c"]) == 0
    canonical = capsys.readouterr().out
    assert main(["--dump-preset", "random-walk"]) == 0
    assert capsys.readouterr().out == canonical == PRESETS["appendix-c"]


def test_dump_unknown_preset():
    assert main(["--dump-preset", "nope"]) == 2


def test_no_command_prints_help():
    assert main([]) == 2


def test_bounds_default_output_path(tmp_path):
    assert main(["bounds", "--preset", "lowerbound", "--T-list", "3,5", "--quiet"]) == 0
    header, rows = _read(tmp_path / "results" / "bounds_lowerbound.csv")
    assert header == BOUNDS_FIELDS
    assert [row["T"] for row in rows] == ["3", "5"]
    assert all(row["variant"] == "nonlinear" for row in rows)


def test_bounds_linear_variant(tmp_path):
    out = tmp_path / "bounds.csv"
    assert main(["bounds", "--preset", "lowerbound", "--T-list", "3", "--variant", "linear", "--out", str(out)]) == 0
    _, rows = _read(out)
    assert rows[0]["variant"] == "linear"
    assert rows[0]["delta_T"] == rows[0]["delta_linear"]


def test_lowerbound_grid(tmp_path):
    out = tmp_path / "lb.csv"
    code = main(["lowerbound", "--preset", "lowerbound", "--T-list", "1", "--N-list", "1,2", "--reps", "400",
                 "--out", str(out), "--quiet"])
    header, rows = _read(out)
    assert header == LOWERBOUND_FIELDS
    assert [(row["T"], row["N"], row["exact"]) for row in rows] == [("1", "1", "0.5"), ("1", "2", "0.75")]
    assert code == (0 if all(row["pass"] == "True" for row in rows) else 1)


def test_sweep_writes_one_row_per_cell(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--preset", "gaussian-scalar", "--N-list", "4,8", "--seeds", "2", "--out", str(out),
                 "--quiet"]) == 0
    header, rows = _read(out)
    assert header == SWEEP_FIELDS
    assert [row["run_id"] for row in rows] == ["0", "1", "2", "3"]
    assert all(row["died_at"] == "" for row in rows)


def test_experiment_writes_summary_and_plots(tmp_path):
    out = tmp_path / "exp.csv"
    script = tmp_path / "regret.gp"
    figure = tmp_path / "regret.png"
    assert main(["experiment", "--preset", "zero-noise", "--T-list", "3", "--seeds", "2", "--out", str(out),
                 "--emit-gnuplot-script", str(script), "--plot", str(figure), "--quiet"]) == 0
    header, rows = _read(out)
    assert header == EXPERIMENT_FIELDS
    assert all(row["reward_gap"] == "0.0" for row in rows)
    _, summary = _read(tmp_path / "exp_summary.csv")
    assert summary[0]["N"] == "1" and summary[0]["runs"] == "2"
    assert "exp_summary.csv" in script.read_text(encoding="utf-8")
    assert figure.stat().st_size > 0


def test_bad_config_exits_2(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[run]\nN = 10, 5\n", encoding="utf-8")
    assert main(["sweep", "--config", str(path), "--quiet"]) == 2


def test_missing_config_exits_2(tmp_path):
    assert main(["bounds", "--config", str(tmp_path / "absent.ini"), "--quiet"]) == 2


def test_inapplicable_oracle_exits_2(tmp_path):
    path = tmp_path / "atoms_kalman.ini"
    path.write_text("[run]\npreset = enumeration-2atom\n[oracle]\nkind = kalman\n", encoding="utf-8")
    assert main(["sweep", "--config", str(path), "--seeds", "1", "--quiet"]) == 2


def test_flag_list_errors_exit_2():
    assert main(["sweep", "--preset", "zero-noise", "--N-list", "8,4", "--quiet"]) == 2
    assert main(["sweep", "--preset", "zero-noise", "--jobs", "0", "--quiet"]) == 2
    assert main(["bounds", "--preset", "lowerbound", "--seed", "-1", "--quiet"]) == 2


def test_validate_small_suite(tmp_path):
    assert main(["validate", "--preset", "gaussian-scalar", "--reps", "2", "--quiet"]) == 0
