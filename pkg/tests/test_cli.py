import json
import subprocess
import sys

import pytest

from kobdual.cli import main


@pytest.fixture
def run(tmp_path, monkeypatch, table_cache):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("KOBDUAL_CACHE", str(table_cache))
    monkeypatch.delenv("KOBDUAL_SEED", raising=False)
    return lambda *argv: main(list(argv))


def test_help_and_version(run, capsys):
    assert run("--help") == 0
    assert run("--version") == 0
    assert "kobdual" in capsys.readouterr().out


def test_bad_usage_is_an_error(run):
    assert run("factory", "build", "--bogus") == 1
    assert run("nope") == 1


def test_identity_check(run, capsys):
    assert run("dual", "identity-check", "--nmax", "5", "--etamax", "5") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["max_discrepancy"] <= 1e-12 and out["passed"]


def test_factory_build_writes_table_and_manifest(run, tmp_path, capsys):
    assert run("factory", "build", "--function", "linear13", "--levels", "8", "--out", "table.kob") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["k_max"] == 8 and summary["poly_bound_exponent"] == 1
    manifest = json.loads((tmp_path / "table.kob.manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["factory_tables"]["linear13"] == summary["digest"]
    assert any("not a proof" in w for w in manifest["warnings"])


def test_clamp2p_rejected(run, capsys):
    assert run("factory", "build", "--function", "clamp2p") == 2
    err = capsys.readouterr().err
    assert "rejected" in err and "witness p=0.5" in err


def test_unknown_function_is_an_error(run):
    assert run("factory", "sample", "--function", "nope", "--p", "0.5") == 1


def test_sample_outputs_reference_manifest(run, tmp_path):
    assert run("factory", "sample", "--function", "linear13", "--p", "0.3", "--reps", "20000", "--out", "s.json") == 0
    out = json.loads((tmp_path / "s.json").read_text())
    assert out["manifest"] == "s.json.manifest.json"
    assert abs(out["mean"] - 1.3 / 3) <= 4 * out["std_error"]
    manifest = json.loads((tmp_path / "s.json.manifest.json").read_text())
    for key in ("tool_version", "config", "seed", "factory_tables", "warnings", "wall_clock_seconds", "manifest_schema"):
        assert key in manifest


def test_same_argv_same_bytes(run, tmp_path):
    argv = ["wf", "particle", "--function", "linear13", "--N", "100", "--y0", "0.2", "--t", "0.1", "--reps", "300"]
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        assert run(*argv, "--out", f"{d}/p.csv") == 0
    first = (tmp_path / "a" / "p.csv").read_bytes()
    assert first == (tmp_path / "b" / "p.csv").read_bytes()
    assert first.startswith(b"# manifest: p.csv.manifest.json\n")


def test_seed_environment_override(run, tmp_path, monkeypatch):
    argv = ["factory", "sample", "--function", "linear13", "--p", "0.5", "--reps", "1000"]
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    monkeypatch.setenv("KOBDUAL_SEED", "5")
    assert run(*argv, "--out", "a/s.json") == 0
    monkeypatch.delenv("KOBDUAL_SEED")
    assert run(*argv, "--seed", "5", "--out", "b/s.json") == 0
    assert (tmp_path / "a" / "s.json").read_bytes() == (tmp_path / "b" / "s.json").read_bytes()
    manifest = json.loads((tmp_path / "a" / "s.json.manifest.json").read_text())
    assert manifest["seed"] == 5


def test_config_file(run, tmp_path, capsys):
    (tmp_path / "cfg.txt").write_text("# dual gap settings\nfunction = linear13\nreps = 2000\nt = 0.25\ny = 0.5\n")
    assert run("dual", "gap", "--config", "cfg.txt") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["lhs"]["count"] == 2000 and out["t"] == 0.25
    # flags beat the config file
    assert run("dual", "gap", "--config", "cfg.txt", "--reps", "1500") == 0
    assert json.loads(capsys.readouterr().out)["lhs"]["count"] == 1500


def test_config_file_errors(run, tmp_path):
    (tmp_path / "bad.txt").write_text("no_such_option = 3\n")
    assert run("dual", "gap", "--config", "bad.txt") == 1
    (tmp_path / "junk.txt").write_text("just words\n")
    assert run("dual", "gap", "--config", "junk.txt") == 1
    assert run("dual", "gap", "--config", "missing.txt") == 1


def test_dual_gap_exclusions_fail_the_check(run, capsys):
    code = run("dual", "gap", "--function", "cubic-voting", "--y", "0.5", "--t", "0.5", "--reps", "2000", "--dim-cap", "3")
    assert code == 2
    assert "check failed" in capsys.readouterr().err


def test_wf_diffusion_csv(run, capsys):
    assert run("wf", "diffusion", "--function", "linear13", "--y0", "0.2", "--t", "0.1", "--reps", "200", "--points", "3") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "time,mean,std_error" and len(lines) == 4


def test_ac_fd_and_compare(run, tmp_path, capsys):
    assert run("ac", "fd", "--function", "linear13", "--t", "0.25", "--lambda", "1") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "x,value" and len(lines) == 10
    assert run("ac", "compare", "--ternary", "--t", "0.1", "--reps", "4000", "--grid", "3", "--out", "c.csv") == 0
    text = (tmp_path / "c.csv").read_text()
    assert text.startswith("# manifest: c.csv.manifest.json")


def test_ac_fd_unstable_dt(run):
    assert run("ac", "fd", "--function", "linear13", "--t", "0.1", "--dt", "0.01") == 1


def test_verify_subset(run, tmp_path):
    assert run("verify", "all", "--only", "6,7", "--budget", "smoke", "--out", "v.json") == 0
    verdict = json.loads((tmp_path / "v.json").read_text())
    assert [c["id"] for c in verdict["criteria"]] == ["6", "7"]
    assert verdict["passed"] and verdict["schema_version"] == 1
    assert run("verify", "all", "--only", "99") == 1


def test_console_entry_point(table_cache):
    res = subprocess.run([sys.executable, "-m", "kobdual", "dual", "identity-check", "--nmax", "2", "--etamax", "2"], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["passed"]
