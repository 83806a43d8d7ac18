import csv
import io
import json
import os
import struct
from pathlib import Path

import numpy as np
import pytest

from tflow import cli, flow
from tflow.config import parse_config
from tflow.errors import FlowStalled, FormatError, IoError, ParseError, ValidationError
from tflow.kernel_io import decode, dump_kernel, encode, load_kernel

DATA = Path(__file__).parent / "data"
SMALL = DATA / "u0_small.toml"

MINIMAL = """
[model]
epsilon = 0.5
U = 2.0
[[model.reservoirs]]
gamma = 1.0
mu = 0.5
"""


# ------------------------------------------------------------------ configuration

def test_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.grid.t_max == 10.0 and cfg.grid.n_points == 256
    assert cfg.stepper.T_floor == 0.01 and cfg.T_target == 0.01
    assert cfg.T_inf == pytest.approx(50.0 * cfg.model.energy_scale())
    assert np.allclose(cfg.rho0, np.diag([1, 0, 0, 0]))
    assert cfg.record_temperatures == ()


def test_digest_is_stable_and_sensitive():
    assert parse_config(MINIMAL).digest() == parse_config(MINIMAL).digest()
    assert parse_config(MINIMAL).digest() != parse_config(MINIMAL.replace("U = 2.0", "U = 2.5")).digest()


def test_explicit_density_matrix():
    cfg = parse_config(MINIMAL + '[initial]\nrho0 = [[0.5, 0, 0, 0], [0, 0.5, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]\n')
    assert cfg.rho0[1, 1] == 0.5
    with pytest.raises(ValidationError) as exc:
        parse_config(MINIMAL + '[initial]\nrho0 = [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]\n')
    assert exc.value.field == "rho0"


@pytest.mark.parametrize("text, field", [
    (MINIMAL.replace("gamma = 1.0", "gamma = -1.0"), "gamma"),
    (MINIMAL + "[grid]\nnpoints = 10\n", "npoints"),
    (MINIMAL + "[colour]\n", "colour"),
    (MINIMAL.replace("U = 2.0\n", ""), "U"),
    (MINIMAL + "[path]\nT_inf = 1.0\nT_target = 2.0\n", "T_target"),
    (MINIMAL + "[output]\nrecord_temperatures = [1e6]\n", "record_temperatures"),
    (MINIMAL + "[stepper]\ndT_min = 5.0\ndT_init = 1.0\n", "stepper"),
    (MINIMAL + '[initial]\nrho0 = "half"\n', "rho0"),
])
def test_validation_names_the_field(text, field):
    with pytest.raises(ValidationError) as exc:
        parse_config(text)
    assert exc.value.field == field


def test_parse_error_location():
    with pytest.raises(ParseError) as exc:
        parse_config("[model\nepsilon = 1\n")
    assert exc.value.line == 1 and exc.value.column is not None


# ------------------------------------------------------------------ kernel files

def test_kernel_round_trip_is_bit_exact(tmp_path, rng):
    values = rng.normal(size=(5, 4, 4)) + 1j * rng.normal(size=(5, 4, 4))
    values[0, 0, 0] = complex(np.nan, -0.0)
    path = tmp_path / "k.tflk"
    dump_kernel(path, values, 0.125)
    back = load_kernel(path)
    assert back.T == 0.125
    assert back.values.tobytes() == values.astype("<c16").tobytes()


def test_kernel_layout():
    blob = encode(np.array([[1 + 2j]]), 2.5)
    assert blob[:4] == b"TFLK"
    assert struct.unpack_from("<IIIId", blob, 4) == (1, 2, 1, 1, 2.5)
    assert struct.unpack_from("<dd", blob, 28) == (1.0, 2.0)


@pytest.mark.parametrize("mangle", [
    lambda b: b[:-1],
    lambda b: b[:10],
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<I", 2) + b[8:],
    lambda b: b + b"\0" * 16,
])
def test_corrupt_kernel_files(mangle):
    with pytest.raises(FormatError):
        decode(mangle(encode(np.ones((2, 3)), 1.0)))


def test_missing_kernel_file(tmp_path):
    with pytest.raises(IoError):
        load_kernel(tmp_path / "nope.tflk")
    with pytest.raises(IoError):
        dump_kernel(tmp_path / "no" / "dir.tflk", np.ones(2), 1.0)


def test_dump_and_load_subcommands(tmp_path, rng, capsys):
    values = rng.normal(size=(3, 16, 16)) + 0j
    np.save(tmp_path / "k.npy", values)
    assert cli.main(["dump-kernel", "--input", str(tmp_path / "k.npy"), "--T", "0.5",
                     "--out", str(tmp_path / "k.tflk")]) == cli.EXIT_OK
    assert cli.main(["load-kernel", str(tmp_path / "k.tflk"), "--npy", str(tmp_path / "back.npy")]) == cli.EXIT_OK
    assert np.array_equal(np.load(tmp_path / "back.npy"), values)
    (tmp_path / "bad.tflk").write_bytes(b"TFLK")
    assert cli.main(["load-kernel", str(tmp_path / "bad.tflk")]) == cli.EXIT_CONFIG


# ------------------------------------------------------------------ exit codes

def test_exit_codes_for_bad_input(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(MINIMAL.replace("gamma = 1.0", "gamma = -1.0"))
    assert cli.main(["run", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert "gamma" in capsys.readouterr().err
    bad.write_text("[model\n")
    assert cli.main(["validate", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert "line 1" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.toml")]) == cli.EXIT_CONFIG
    assert cli.main(["--threads", "0", "run", "--config", str(SMALL)]) == cli.EXIT_CONFIG


def test_exit_code_for_numerical_failure(monkeypatch, capsys):
    def stalled(*a, **k):
        raise FlowStalled("step fell below dT_min")
    monkeypatch.setattr(cli, "flow_run", stalled)
    assert cli.main(["run", "--config", str(SMALL)]) == cli.EXIT_NUMERICAL
    assert "dT_min" in capsys.readouterr().err


# ------------------------------------------------------------------ a small run

@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = cli.load_config(SMALL)
    result = cli.run_flow(cfg)
    code = cli.cmd_run(cfg, str(out), result)
    return cfg, result, code, out


def test_run_outputs(small_run):
    cfg, _, code, out = small_run
    assert code == cli.EXIT_OK
    assert sorted(os.listdir(out)) == ["kernel_T0.1.tflk", "kernel_T1.tflk", "manifest.json", "observables.csv"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["records"] == [50.0, 1.0, 0.1]
    assert man["kernel_dumps"] == ["kernel_T1.tflk", "kernel_T0.1.tflk"]
    assert man["config_sha256"] == cfg.digest()
    assert man["u0_oracle"]["passed"]
    assert man["u0_oracle"]["kernel_rel_dev"] <= cli.ORACLE_TOL
    k = load_kernel(out / "kernel_T0.1.tflk")
    assert k.T == 0.1 and k.values.shape == (33, 16, 16)


def test_run_matches_golden_observables(small_run):
    out = small_run[3]
    got = (out / "observables.csv").read_text()
    want = (DATA / "u0_small_observables.csv").read_text()
    assert got.splitlines()[0] == ",".join(cli.CSV_COLUMNS)
    g = np.array(list(csv.reader(io.StringIO(got)))[1:], dtype=float)
    w = np.array(list(csv.reader(io.StringIO(want)))[1:], dtype=float)
    assert g.shape == w.shape
    assert np.allclose(g[:, :8], w[:, :8], rtol=1e-8, atol=1e-12)
    assert np.allclose(g[:, 8:], w[:, 8:], atol=1e-12)     # round-off sized diagnostics


def test_output_is_reproducible(small_run, tmp_path):
    cfg, result, _, out = small_run
    cli.cmd_run(cfg, str(tmp_path), result)
    for name in os.listdir(out):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_validate_checks(small_run, capsys):
    cfg, result, _, _ = small_run
    checks = {c["name"]: c for c in cli.validation_checks(cfg, result)}
    assert checks["fixed point"]["status"] == "skipped"
    for name in ("complete positivity", "trace preservation", "hermiticity preservation",
                 "zero-time kernel", "U=0 oracle (kernel)", "U=0 oracle (occupations)"):
        assert checks[name]["status"] == "pass", name
    assert cli.cmd_validate(cfg, result) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("SKIPPED fixed point") for line in lines)
    assert any(line.startswith("PASS complete positivity") for line in lines)


def test_validate_catches_a_broken_crossing_diagram(tmp_path, monkeypatch, capsys):
    cfg_path = tmp_path / "c.toml"
    cfg_path.write_text(SMALL.read_text().replace("T_target = 0.1", "T_target = 2.0")
                        .replace("record_temperatures = [1.0, 0.1]", "record_temperatures = []"))
    real = flow.triangle_sum
    monkeypatch.setattr(flow, "triangle_sum", lambda h, dt: -real(h, dt))
    assert cli.main(["validate", "--config", str(cfg_path)]) == cli.EXIT_VALIDATION
    out = capsys.readouterr().out
    assert "FAIL U=0 oracle (kernel)" in out
