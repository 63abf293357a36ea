import csv

import pytest

import main as cli
from validation import CheckResult


SMALL_SIMULATION = """
seed: 3
snr_db: [10]
simulation:
  target_errors: 50
  max_trials: 1000
  block_size: 500
"""


def write_config(tmp_path, text: str, name: str = "run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_output(path):
    lines = path.read_text().splitlines()
    metadata = [line for line in lines if line.startswith("#")]
    rows = list(csv.DictReader([line for line in lines if not line.startswith("#")]))
    return metadata, rows


def test_analytic_with_defaults_writes_one_row(tmp_path):
    out = tmp_path / "analytic.csv"

    assert cli.main(["analytic", "--out", str(out)]) == cli.EXIT_OK

    metadata, rows = read_output(out)
    assert len(rows) == 1
    assert list(rows[0]) == cli.COMMAND_COLUMNS["analytic"]
    assert rows[0]["scheme"] == "im-mh"
    assert rows[0]["aber_method"] == "factorized"
    assert metadata[0].startswith("# schema oamhop-analytic/v1: scheme,csi,variant")
    assert any(line.startswith("# config_hash ") for line in metadata)
    assert any(line.startswith("# derived snr_db=20.0") for line in metadata)


def test_variant_flag_reaches_the_rows(tmp_path):
    out = tmp_path / "analytic.csv"

    cli.main(["analytic", "--variant", "paper-literal", "--out", str(out)])

    assert read_output(out)[1][0]["variant"] == "paper-literal"


def test_invalid_system_exits_with_config_error(tmp_path, capsys):
    config = write_config(tmp_path, "system:\n  N: 4\n  I: 6\n")

    assert cli.main(["analytic", "--config", str(config)]) == cli.EXIT_CONFIG_ERROR
    assert "config error" in capsys.readouterr().err


def test_invalid_sweep_value_exits_with_config_error(tmp_path):
    config = write_config(tmp_path, "sweep:\n  name: I\n  values: [2, 12]\n")

    assert cli.main(["analytic", "--config", str(config)]) == cli.EXIT_CONFIG_ERROR


def test_same_seed_gives_identical_files(tmp_path):
    config = write_config(tmp_path, SMALL_SIMULATION)
    first, second = tmp_path / "first.csv", tmp_path / "second.csv"

    cli.main(["simulate", "--config", str(config), "--seed", "7", "--out", str(first)])
    cli.main(["simulate", "--config", str(config), "--seed", "7", "--threads", "2", "--out", str(second)])

    assert first.read_text() == second.read_text()
    assert "# seed 7" in first.read_text().splitlines()


def test_noiseless_simulation_reports_zero_errors(tmp_path):
    config = write_config(
        tmp_path,
        "snr_db: [300]\n"
        "system:\n  xi: .inf\n  jnr_db: -.inf\n"
        "simulation:\n  max_trials: 400\n  block_size: 200\n",
    )
    out = tmp_path / "noiseless.csv"

    assert cli.main(["simulate", "--config", str(config), "--out", str(out)]) == cli.EXIT_OK

    row = read_output(out)[1][0]
    assert row["errors"] == "0"
    assert float(row["ber"]) == 0.0
    assert row["trials"] == "400"


def test_sweep_writes_one_row_per_axis_value(tmp_path):
    config = write_config(tmp_path, SMALL_SIMULATION + "sweep:\n  name: U\n  values: [1, 2]\n")
    out = tmp_path / "sweep.csv"

    assert cli.main(["sweep", "--config", str(config), "--out", str(out)]) == cli.EXIT_OK

    rows = read_output(out)[1]
    assert [row["U"] for row in rows] == ["1", "2"]
    assert all(row["aber_bound"] and row["ber"] for row in rows)


def test_validate_reports_failures_with_exit_one(tmp_path, monkeypatch):
    monkeypatch.setattr(
        cli,
        "run_validation",
        lambda: [CheckResult("ok", True, "fine", "exact"), CheckResult("broken", False, "off by one", "exact")],
    )
    out = tmp_path / "validate.txt"

    assert cli.main(["validate", "--out", str(out)]) == cli.EXIT_VALIDATION_FAILED
    assert "FAIL  broken: off by one" in out.read_text()


def test_validate_passes_when_every_check_passes(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "run_validation", lambda: [CheckResult("ok", True, "fine", "exact")])

    assert cli.main(["validate", "--out", str(tmp_path / "validate.txt")]) == cli.EXIT_OK


def test_unknown_command_is_rejected_by_argparse():
    with pytest.raises(SystemExit):
        cli.main(["plot"])
