"""Command-line contract: config validation, outputs, exit codes, determinism."""
from __future__ import annotations

from pathlib import Path

import pytest

import divflow as dv
from divflow.cli import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_RUNTIME,
    main,
    parse_config,
)


def write_config(path: Path, **overrides) -> Path:
    values = {
        "tag": "OU1D",
        "dt": "0.001",
        "horizon": "1.0",
        "paths": "2000",
        "seed": "2026",
        "p": "2.0",
        "q": "4.0",
        "t0": "auto",
        "ensemble": "4000",
        "dir": str(path.parent / "out"),
    }
    values.update({k: str(v) for k, v in overrides.items()})
    text = f"""[problem]
tag = {values['tag']}

[simulation]
dt = {values['dt']}
horizon = {values['horizon']}
paths = {values['paths']}
seed = {values['seed']}

[inequality]
p = {values['p']}
q = {values['q']}
t0 = {values['t0']}
ensemble = {values['ensemble']}

[output]
dir = {values['dir']}
"""
    path.write_text(text)
    return path


def read(path: Path) -> str:
    return path.read_text()


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def test_parse_config_defaults_and_overrides(tmp_path):
    cfg_path = write_config(tmp_path / "a.ini")
    cfg = parse_config(cfg_path)
    assert cfg.tag == "OU1D"
    assert cfg.r == pytest.approx(4.0)
    cfg2 = parse_config(cfg_path, {"seed": 7, "tag": "DW1D"})
    assert cfg2.seed == 7
    assert cfg2.tag == "DW1D"


def test_parse_config_rotation_parameter(tmp_path):
    path = tmp_path / "rot.ini"
    path.write_text("[problem]\ntag = ROT2D\nh = 3.0\n")
    cfg = parse_config(path)
    assert cfg.problem_params == {"h": 3.0}
    bad = tmp_path / "bad.ini"
    bad.write_text("[problem]\ntag = OU1D\nh = 3.0\n")
    with pytest.raises(dv.ConfigError):
        parse_config(bad)


def test_parse_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[simulation]\nwibble = 3\n")
    with pytest.raises(dv.ConfigError):
        parse_config(path)


def test_parse_config_rejects_unknown_section(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[mystery]\nx = 1\n")
    with pytest.raises(dv.ConfigError):
        parse_config(path)


def test_parse_config_rejects_bad_exponents(tmp_path):
    cfg_path = write_config(tmp_path / "a.ini", p="2.0", q="1.5")
    with pytest.raises(dv.ConfigError):
        parse_config(cfg_path)


def test_parse_config_rejects_low_r(tmp_path):
    cfg_path = write_config(tmp_path / "a.ini", p="1.0", q="3.0")
    with pytest.raises(dv.ConfigError):
        parse_config(cfg_path)


def test_missing_config_file(tmp_path):
    assert main(["verify", "--config", str(tmp_path / "nope.ini")]) == EXIT_CONFIG


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def test_simulate_writes_csv_per_path(tmp_path, capsys):
    cfg_path = write_config(tmp_path / "sim.ini", paths=10)
    code = main(["simulate", "--config", str(cfg_path)])
    assert code == EXIT_OK
    out = tmp_path / "out"
    files = sorted(out.glob("path_*.csv"))
    assert len(files) == 10
    body = read(files[0])
    assert "# seed=2026" in body
    assert "# dt=0.001" in body
    header = [line for line in body.splitlines() if line.startswith("t,")][0]
    assert header == "t,x_1,exited"
    assert (out / "exit_stats.csv").exists()


def test_simulate_exit_code_on_bad_config(tmp_path):
    cfg_path = write_config(tmp_path / "sim.ini", p="3.0", q="2.0")
    assert main(["simulate", "--config", str(cfg_path)]) == EXIT_CONFIG


def test_simulate_unstable_step_exits_runtime(tmp_path, capsys):
    cfg_path = write_config(
        tmp_path / "sim.ini", tag="DW1D", dt="10.0", horizon="100.0", paths=3, t0="0.25"
    )
    assert main(["simulate", "--config", str(cfg_path)]) == EXIT_RUNTIME
    err = capsys.readouterr().err
    assert "step" in err


# ---------------------------------------------------------------------------
# gradient
# ---------------------------------------------------------------------------


def test_gradient_writes_rows_per_component_and_route(tmp_path):
    cfg_path = write_config(tmp_path / "g.ini", paths=4000)
    code = main(
        ["gradient", "--config", str(cfg_path), "--function", "bump0_w1", "--x", "0.3"]
    )
    assert code == EXIT_OK
    body = read(tmp_path / "out" / "gradient.csv")
    assert "frechet" in body and "malliavin" in body and "residual" in body
    assert "# identity_check=pass" in body


def test_gradient_unknown_function(tmp_path):
    cfg_path = write_config(tmp_path / "g.ini")
    with pytest.raises(KeyError):
        main(["gradient", "--config", str(cfg_path), "--function", "nope", "--x", "0.0"])


def test_gradient_policy_violation_is_config_error(tmp_path):
    cfg_path = write_config(tmp_path / "g.ini", t0="9.0")  # t_star = 8/4 = 2
    code = main(
        ["gradient", "--config", str(cfg_path), "--function", "bump0_w1", "--x", "0.3"]
    )
    assert code == EXIT_CONFIG


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def verify_config(tmp_path, **overrides):
    values = dict(paths=3000, ensemble=6000)
    values.update(overrides)
    return write_config(tmp_path / "v.ini", **values)


def test_verify_ou_passes_and_reports(tmp_path, capsys):
    cfg_path = verify_config(tmp_path)
    code = main(["verify", "--config", str(cfg_path)])
    assert code == EXIT_OK
    out = tmp_path / "out"
    report = read(out / "report.md")
    assert "theoretical constant C" in report
    assert "| gradient_inequality | pass" in report
    norms = read(out / "norms.csv")
    header = next(line for line in norms.splitlines() if line.startswith("f,"))
    assert header.endswith("C,ratio,verdict")
    assert (out / "trace.csv").exists()
    assert (out / "gradient_routes.csv").exists()


def test_verify_rot2d_passes(tmp_path):
    cfg_path = verify_config(tmp_path, tag="ROT2D")
    assert main(["verify", "--config", str(cfg_path)]) == EXIT_OK


def test_verify_negated_control_fails(tmp_path, capsys):
    cfg_path = verify_config(tmp_path)
    code = main(["verify", "--config", str(cfg_path), "--debug-negate-control"])
    assert code == EXIT_CHECK_FAILED
    err = capsys.readouterr().err
    assert "ibp_identity" in err or "control_discrepancy" in err


def test_verify_rerun_is_byte_identical(tmp_path):
    cfg_path = verify_config(tmp_path)
    assert main(["verify", "--config", str(cfg_path), "--out", str(tmp_path / "r1")]) == EXIT_OK
    assert main(["verify", "--config", str(cfg_path), "--out", str(tmp_path / "r2")]) == EXIT_OK
    files1 = sorted((tmp_path / "r1").iterdir())
    files2 = sorted((tmp_path / "r2").iterdir())
    assert [f.name for f in files1] == [f.name for f in files2]
    for f1, f2 in zip(files1, files2):
        assert f1.read_bytes() == f2.read_bytes()


def test_seed_override_changes_outputs(tmp_path):
    cfg_path = write_config(tmp_path / "s.ini", paths=5)
    assert main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "a"), "--seed", "1"]) == EXIT_OK
    assert main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "b"), "--seed", "2"]) == EXIT_OK
    assert (tmp_path / "a" / "path_00000.csv").read_bytes() != (
        tmp_path / "b" / "path_00000.csv"
    ).read_bytes()
