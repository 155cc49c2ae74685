"""CLI behavior: subcommands, exit codes, overrides, artifacts."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fewstep.cli import main

from conftest import tiny_blob


@pytest.fixture()
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_blob()))
    return path


def run_cli(*argv):
    return main(list(argv))


def test_run_subcommand_trains_and_reports(tmp_path, tiny_config_file, capsys):
    out = tmp_path / "run"
    code = run_cli("run", "--config", str(tiny_config_file), "--out", str(out), "--quiet")
    assert code == 0
    printed = capsys.readouterr().out
    assert "coverage" in printed and "energy_distance" in printed
    assert (out / "report.json").exists()
    assert (out / "samples.csv").exists()


def test_run_set_overrides_reach_the_resolved_config(tmp_path, tiny_config_file, capsys):
    out = tmp_path / "run"
    code = run_cli(
        "run", "--config", str(tiny_config_file), "--out", str(out), "--quiet",
        "--set", "dmd.iters=2", "--set", "seed=3",
    )
    assert code == 0
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["dmd"]["iters"] == 2
    assert resolved["seed"] == 3
    capsys.readouterr()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus_key": 1}))
    code = run_cli("run", "--config", str(bad), "--out", str(tmp_path / "x"), "--quiet")
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_training_abort_exits_3(tmp_path, tiny_config_file, capsys):
    # a collapse threshold above 1 trips the detector unconditionally
    code = run_cli(
        "run", "--config", str(tiny_config_file), "--out", str(tmp_path / "x"), "--quiet",
        "--set", "gan.collapse_threshold=1.5", "--set", "gan.collapse_patience=2",
    )
    assert code == 3
    assert "training aborted" in capsys.readouterr().err


def test_verify_unknown_suite_exits_2(capsys):
    assert run_cli("verify", "nonsense") == 2
    err = capsys.readouterr().err
    assert "unknown suite" in err and "quadrature" in err


def test_verify_quadrature_suite_passes(capsys):
    assert run_cli("verify", "quadrature") == 0
    out = capsys.readouterr().out
    assert "checks passed" in out
    assert "fail" not in out.replace("failed", "")


def test_ablate_subcommand_smoke(tmp_path, capsys):
    blob = tiny_blob(teacher={"iters": 20}, pretrain={"iters": 10},
                     gan={"iters": 3}, dmd={"iters": 2})
    cfg_path = tmp_path / "abl.json"
    cfg_path.write_text(json.dumps(blob))
    out = tmp_path / "mx"
    code = run_cli("ablate", "--config", str(cfg_path), "--seeds", "1,2,3",
                   "--out", str(out), "--quiet")
    assert code == 0
    printed = capsys.readouterr().out
    for row in ("no_gan", "gan_only", "plain", "soften"):
        assert row in printed
    assert (out / "matrix.json").exists()


def test_ablate_rejects_too_few_seeds(tmp_path, tiny_config_file, capsys):
    code = run_cli("ablate", "--config", str(tiny_config_file), "--seeds", "1,2",
                   "--out", str(tmp_path / "mx"), "--quiet")
    assert code == 2
    assert "3 seeds" in capsys.readouterr().err


class TestSampleFromCheckpoint:
    @pytest.fixture()
    def run_dir(self, tmp_path, tiny_config_file, capsys):
        out = tmp_path / "run"
        assert run_cli("run", "--config", str(tiny_config_file),
                       "--out", str(out), "--quiet") == 0
        capsys.readouterr()
        return out

    def test_sampling_is_deterministic_per_seed(self, run_dir, tmp_path, capsys):
        ck = run_dir / "checkpoint"
        a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
        for path in (a, b):
            assert run_cli("sample", "--checkpoint", str(ck), "--n", "32",
                           "--out", str(path), "--seed", "5") == 0
        assert run_cli("sample", "--checkpoint", str(ck), "--n", "32",
                       "--out", str(c), "--seed", "6") == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()
        assert len(a.read_text().splitlines()) == 33
        assert "coverage" in capsys.readouterr().out

    def test_deterministic_flag_changes_the_draw(self, run_dir, tmp_path, capsys):
        ck = run_dir / "checkpoint"
        sto, det = tmp_path / "sto.csv", tmp_path / "det.csv"
        assert run_cli("sample", "--checkpoint", str(ck), "--n", "16",
                       "--out", str(sto), "--seed", "5") == 0
        assert run_cli("sample", "--checkpoint", str(ck), "--n", "16",
                       "--out", str(det), "--seed", "5", "--deterministic") == 0
        assert sto.read_bytes() != det.read_bytes()
        capsys.readouterr()

    def test_zero_samples_writes_header_only(self, run_dir, tmp_path, capsys):
        out = tmp_path / "empty.csv"
        assert run_cli("sample", "--checkpoint", str(run_dir / "checkpoint"),
                       "--n", "0", "--out", str(out)) == 0
        assert out.read_text() == "seed,step,dim_0,dim_1\n"
        capsys.readouterr()

    def test_missing_checkpoint_exits_2(self, tmp_path, capsys):
        code = run_cli("sample", "--checkpoint", str(tmp_path / "nope"),
                       "--n", "4", "--out", str(tmp_path / "s.csv"))
        assert code == 2
        assert "checkpoint error" in capsys.readouterr().err

    def test_report_subcommand(self, run_dir, capsys):
        assert run_cli("report", str(run_dir)) == 0
        out = capsys.readouterr().out
        assert "coverage" in out and "phases" in out
        assert run_cli("report", str(run_dir / "missing.json")) == 2
        assert "no report" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "fewstep", "verify", "quadrature"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0
    assert "checks passed" in proc.stdout


def test_console_script_installed():
    proc = subprocess.run(
        ["fewstep", "verify", "quadrature"], capture_output=True, text=True, timeout=120
    )
    assert proc.returncode == 0
