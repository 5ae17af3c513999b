import json

import pytest

from fgbfi.cli import main
from conftest import X0_TUMOR_A

TUMOR_ARGS = ["--model", "tumor", "-p", "N=5,H=3,I=0.7",
              "--x0", ",".join(X0_TUMOR_A)]
FAST = ["--bits", "64", "--eps-series", "1e-12"]


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("integrate", "verify", "returns", "rk4-compare", "lyapunov"):
        assert cmd in out


@pytest.mark.parametrize("cmd", ["integrate", "verify", "returns",
                                 "rk4-compare", "lyapunov"])
def test_subcommand_help_shows_flags_with_units(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--bits", "--eps-series", "--eps-roundtrip", "--delta",
                 "--degree-cap", "--x0"):
        assert flag in out
    assert "time units" in out


def test_integrate_zero_time_header_only(capsys):
    rc = main(["integrate", *TUMOR_ARGS, "-T", "0"])
    assert rc == 0
    out = capsys.readouterr().out
    body = [l for l in out.splitlines() if not l.startswith("#")]
    assert body == []
    assert "# fingerprint:" in out


def test_integrate_writes_file_and_manifest(tmp_path, capsys):
    out = tmp_path / "traj.tsv"
    rc = main(["integrate", *TUMOR_ARGS, *FAST, "-T", "0.2",
               "--grid", "0.05", "--out", str(out)])
    assert rc == 0
    text = out.read_text()
    rows = [l for l in text.splitlines() if not l.startswith("#")]
    assert len(rows) == 5  # 0, .05, .1, .15, .2
    cols = rows[0].split()
    assert len(cols) == 5  # t, x1..x3, degree
    manifest = json.loads((tmp_path / "traj.tsv.manifest.json").read_text())
    assert manifest["inputs"]["command"] == "integrate"
    assert manifest["artifacts"] == [str(out)]
    assert f"# fingerprint: {manifest['fingerprint']}" in text
    assert "degree_stats" in manifest


def test_integrate_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    argv = ["integrate", *TUMOR_ARGS, *FAST, "-T", "0.2", "--grid", "0.05"]
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_integrate_backward_direction(tmp_path):
    out = tmp_path / "b.tsv"
    rc = main(["integrate", *TUMOR_ARGS, *FAST, "-T", "0.1", "--grid", "0.05",
               "--direction", "backward", "--out", str(out)])
    assert rc == 0
    rows = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    # times are printed signed: backward runs show negative t
    assert rows[1].split()[0].startswith("-")


def test_verify_pass_and_exit_zero(capsys):
    rc = main(["verify", *TUMOR_ARGS, *FAST, "-T", "0"])
    assert rc == 0
    assert "passed: true" in capsys.readouterr().out


def test_verify_failure_exits_two(capsys):
    # completes (huge ball) but misses the round-trip tolerance
    rc = main(["verify", *TUMOR_ARGS, "--bits", "160", "--eps-series", "1e-30",
               "-T", "27.327", "--ball-center", "2.9,2.8,5.3",
               "--ball-radius", "1e6"])
    assert rc == 2
    out = capsys.readouterr().out
    assert "passed: false" in out
    assert "max_deviation" in out


def test_ball_escape_exits_three(capsys):
    rc = main(["integrate", *TUMOR_ARGS, "-T", "27.327",
               "--direction", "backward", "--bits", "40",
               "--eps-series", "1e-3", "--eps-roundtrip", "1e-2"])
    assert rc == 3
    err = capsys.readouterr().err
    assert "Decrease the value eps_p and/or eps_m" in err


def test_bad_precision_exits_four(capsys):
    rc = main(["verify", *TUMOR_ARGS, "-T", "1", "--bits", "24",
               "--eps-series", "1e-10"])
    assert rc == 4
    assert "eps_machine" in capsys.readouterr().err


def test_unknown_model_exits_five(capsys):
    rc = main(["integrate", "--model", "nope", "--x0", "1,1,1", "-T", "1"])
    assert rc == 5


def test_malformed_definition_exits_five(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x", "dimension": }')
    rc = main(["integrate", "--system", str(bad), "--x0", "1,1,1", "-T", "1"])
    assert rc == 5
    assert "line 1" in capsys.readouterr().err


def test_missing_model_and_system_exits_five():
    assert main(["integrate", "--x0", "1,1,1", "-T", "1"]) == 5


def test_system_definition_file_runs(tmp_path, capsys):
    doc = {
        "name": "decay",
        "dimension": 2,
        "A": ["-1", "0", "0", "-2"],
        "Q": [["0"] * 4, ["0"] * 4],
    }
    f = tmp_path / "decay.json"
    f.write_text(json.dumps(doc))
    rc = main(["integrate", "--system", str(f), "--x0", "1,1", "-T", "1",
               "--grid", "0.5", *FAST,
               "--ball-center", "0,0", "--ball-radius", "4"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "decay" in out
    rows = [l for l in out.splitlines() if not l.startswith("#")]
    assert len(rows) == 3
    # endpoint ~ (e^-1, e^-2)
    vals = rows[-1].split()
    assert abs(float(vals[1]) - 0.36787944) < 1e-6
    assert abs(float(vals[2]) - 0.13533528) < 1e-6


def test_returns_equilibrium_single_row(capsys):
    rc = main(["returns", "--model", "tumor", "-p", "N=5,H=3,I=0.7",
               "--x0", "0,0,0", "-T", "1", "--grid", "0.25", *FAST,
               "--ball-center", "0,0,0", "--ball-radius", "1"])
    assert rc == 0
    rows = [l for l in capsys.readouterr().out.splitlines()
            if not l.startswith("#")]
    assert len(rows) == 1
    assert rows[0].startswith("0 ")


def test_rk4_compare_reports_order(capsys):
    rc = main(["rk4-compare", *TUMOR_ARGS, *FAST, "-T", "2",
               "--rk-steps", "0.04,0.02,0.01"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "convergence order" in out
    rows = [l for l in out.splitlines() if not l.startswith("#")]
    assert len(rows) == 3


def test_lyapunov_custom_vectors_and_divergence(capsys):
    rc = main(["lyapunov", "--model", "tumor", "-p", "N=5,H=3,I=0.7",
               "--x0", ",".join(X0_TUMOR_A), "-T", "1", "-M", "100", *FAST,
               "--vectors", "1,0,0;0,1,0;0,0,1", "--divergence-grid", "0.01"])
    assert rc == 0
    out = capsys.readouterr().out
    rows = [l for l in out.splitlines() if not l.startswith("#")]
    assert len(rows) == 1 and rows[0].startswith("custom ")
    assert "divergence average" in out


def test_lyapunov_duplicate_vectors_exit_four(capsys):
    rc = main(["lyapunov", "--model", "tumor", "-p", "N=5,H=3,I=0.7",
               "--x0", ",".join(X0_TUMOR_A), "-T", "1", "-M", "10", *FAST,
               "--vectors", "1,0,0;2,0,0;0,0,1"])
    assert rc == 4
    assert "linearly dependent" in capsys.readouterr().err


def test_lyapunov_unknown_group_exit_five():
    rc = main(["lyapunov", "--model", "tumor", "-p", "N=5,H=3,I=0.7",
               "--x0", ",".join(X0_TUMOR_A), "-T", "1", "-M", "10", *FAST,
               "--groups", "V"])
    assert rc == 5


def test_env_overrides_defaults(monkeypatch, capsys):
    monkeypatch.setenv("FGBFI_BITS", "64")
    monkeypatch.setenv("FGBFI_EPS_SERIES", "1e-12")
    rc = main(["integrate", *TUMOR_ARGS, "-T", "0"])
    assert rc == 0
    assert "bits=64" in capsys.readouterr().out


def test_fingerprint_tracks_inputs(tmp_path):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    base = ["integrate", *TUMOR_ARGS, *FAST, "--grid", "0.05"]
    main(base + ["-T", "0.1", "--out", str(a)])
    main(base + ["-T", "0.2", "--out", str(b)])
    fa = json.loads((tmp_path / "a.tsv.manifest.json").read_text())["fingerprint"]
    fb = json.loads((tmp_path / "b.tsv.manifest.json").read_text())["fingerprint"]
    assert fa != fb
