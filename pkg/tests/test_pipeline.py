"""End-to-end orchestration: phases, artifacts, checkpoints, ablation matrix.

Everything here runs on the tiny conftest config (50-step schedule, 16-wide
nets, double-digit iteration counts) so the full pipeline stays sub-second.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from fewstep.config import RunConfig, resolved_json
from fewstep.exceptions import CheckpointError, ConfigError
from fewstep.pipeline import (
    ABLATION_ROWS,
    build_skeleton,
    dmd_phase,
    final_eval,
    gan_phase,
    init_state,
    load_checkpoint,
    run_ablation_matrix,
    run_experiment,
    save_checkpoint,
    write_samples_csv,
)

from conftest import tiny_blob


def test_ablation_rows_toggle_the_right_switches():
    assert ABLATION_ROWS == {
        "no_gan": {"gan_init": False, "dmd": True, "soften": True},
        "gan_only": {"gan_init": True, "dmd": False, "soften": False},
        "plain": {"gan_init": True, "dmd": True, "soften": False},
        "soften": {"gan_init": True, "dmd": True, "soften": True},
    }


def test_skeleton_rejects_conditional_runs(tiny_cfg):
    tiny_cfg.nets.cond_dim = 4
    with pytest.raises(ConfigError, match="unconditional"):
        build_skeleton(tiny_cfg)


def test_skeleton_wiring(tiny_cfg):
    state = build_skeleton(tiny_cfg)
    assert state.phase == "setup"
    assert state.provider.tag == "analytic"
    assert state.opts["student"].lr == tiny_cfg.lr
    for name in ("teacher", "pretrain", "gan", "dmd-data", "dmd-noise", "fake", "head",
                 "eval", "eval-real", "eval-baseline"):
        assert name in state.rngs


def test_init_state_prepares_teacher_student_and_fake(tiny_cfg):
    state = init_state(tiny_cfg)
    assert state.phase == "ready"
    assert len(state.logs["teacher"]) == tiny_cfg.teacher.iters
    assert len(state.logs["pretrain"]) == tiny_cfg.pretrain.iters
    # matching widths let the fake score start from the teacher weights
    np.testing.assert_array_equal(state.fake.net.params, state.teacher.denoiser.net.params)
    assert ("teacher", 60) in state.phase_spans and ("pretrain", 30) in state.phase_spans


def test_training_progress_does_not_shift_eval_streams(tiny_cfg):
    a = init_state(tiny_cfg)
    b = init_state(RunConfig.from_dict(tiny_blob()))
    gan_phase(b)
    np.testing.assert_array_equal(
        a.rngs["eval"].standard_normal(8), b.rngs["eval"].standard_normal(8)
    )


def test_gan_phase_requires_prepared_state(tiny_cfg):
    state = build_skeleton(tiny_cfg)
    with pytest.raises(RuntimeError, match="cannot start"):
        gan_phase(state)


def test_dmd_phase_requires_completed_gan(tiny_cfg):
    state = init_state(tiny_cfg)
    with pytest.raises(RuntimeError, match="adversarial iterations"):
        dmd_phase(state)


def test_dmd_phase_runs_directly_when_gan_is_ablated():
    cfg = RunConfig.from_dict(tiny_blob(ablation={"gan_init": False}, dmd={"iters": 2}))
    state = init_state(cfg)
    dmd_phase(state)
    assert state.dmd_iters_done == 2


def test_dmd_phase_step_accounting_with_warmup():
    cfg = RunConfig.from_dict(tiny_blob(dmd={"iters": 2, "warmup_fake_iters": 3}))
    state = init_state(cfg)
    gan_phase(state)
    dmd_phase(state)
    assert state.dmd_warmup_done
    # per iteration: two_scale head updates + one student step + two_scale fake
    # updates; plus the one-time fake-score warmup
    spans = dict(s for s in state.phase_spans if s[0] == "dmd")
    assert spans["dmd"] == 3 + 2 * (2 + 1 + 2)


def test_dmd_phase_chain_head_fakes_and_normalized_cotangent():
    cfg = RunConfig.from_dict(
        tiny_blob(dmd={"iters": 1, "head_fake_source": "chain", "normalize_cotangent": True})
    )
    state = init_state(cfg)
    gan_phase(state)
    dmd_phase(state)
    assert state.dmd_iters_done == 1
    assert len(state.logs["dmd"]) == 1


def test_final_eval_report_shape(tiny_cfg):
    state = init_state(tiny_cfg)
    final = final_eval(state)
    assert final["samples"].shape == (64, 2)
    assert final["student_evals"] == 4
    assert final["baseline"]["steps"] == 10
    assert final["speedup"]["count_ratio"] == pytest.approx(2.5)
    assert final["speedup"]["meets_count_ratio_10x"] is False
    assert 0.0 <= final["coverage"] <= 1.0
    assert np.isfinite(final["energy_distance"])
    assert len(final["mode_hits"]) == 4


def test_run_experiment_artifacts(tmp_path, tiny_cfg):
    report = run_experiment(tiny_cfg, tmp_path / "run")
    out = tmp_path / "run"
    expected = {
        "resolved_config.json", "teacher_log.csv", "pretrain_log.csv",
        "gan_log.csv", "dmd_log.csv", "samples.csv", "checkpoint", "report.json",
    }
    assert {p.name for p in out.iterdir()} == expected
    assert (out / "resolved_config.json").read_text() == resolved_json(tiny_cfg)
    on_disk = json.loads((out / "report.json").read_text())
    assert on_disk["iterations"] == {"gan": 10, "dmd": 10}
    assert on_disk["config"] == tiny_cfg.to_dict()
    assert set(on_disk["files"]) == {"teacher", "pretrain", "gan", "dmd", "samples", "checkpoint"}
    assert report["samples"].shape == (64, 2)
    assert "samples" not in on_disk
    header = (out / "samples.csv").read_text().splitlines()[0]
    assert header == "seed,step,dim_0,dim_1"
    first = (out / "samples.csv").read_text().splitlines()[1].split(",")
    assert first[0] == "900" and first[1] == "12"


def test_reruns_are_byte_identical(tmp_path, tiny_cfg):
    run_experiment(tiny_cfg, tmp_path / "a")
    run_experiment(RunConfig.from_dict(tiny_blob()), tmp_path / "b")
    for name in ("samples.csv", "teacher_log.csv", "gan_log.csv", "dmd_log.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "checkpoint" / "state.bin").read_bytes() == (
        tmp_path / "b" / "checkpoint" / "state.bin"
    ).read_bytes()
    assert (tmp_path / "a" / "checkpoint" / "manifest.json").read_bytes() == (
        tmp_path / "b" / "checkpoint" / "manifest.json"
    ).read_bytes()


def test_write_samples_csv_roundtrip(tmp_path):
    samples = np.array([[0.1234567890123456789, -2.0], [1e-17, 3.5]])
    path = tmp_path / "s.csv"
    write_samples_csv(path, samples, seed=42, step=999)
    lines = path.read_text().splitlines()
    assert lines[0] == "seed,step,dim_0,dim_1"
    parsed = [line.split(",") for line in lines[1:]]
    # %.17g repr roundtrips float64 exactly
    back = np.array([[float(v) for v in row[2:]] for row in parsed])
    np.testing.assert_array_equal(back, samples)
    assert all(row[0] == "42" and row[1] == "999" for row in parsed)


def test_checkpoint_roundtrip_is_bit_exact(tmp_path, tiny_cfg):
    state = init_state(tiny_cfg)
    gan_phase(state)
    save_checkpoint(state, tmp_path / "ck")
    loaded = load_checkpoint(tmp_path / "ck")
    np.testing.assert_array_equal(loaded.student.denoiser.net.params,
                                  state.student.denoiser.net.params)
    np.testing.assert_array_equal(loaded.fake.net.params, state.fake.net.params)
    np.testing.assert_array_equal(loaded.disc.head.params, state.disc.head.params)
    np.testing.assert_array_equal(loaded.opts["student"].m, state.opts["student"].m)
    assert loaded.opts["student"].step == state.opts["student"].step
    assert loaded.phase == "gan"
    assert loaded.gan_iters_done == 10
    np.testing.assert_array_equal(
        loaded.rngs["dmd-data"].standard_normal(6), state.rngs["dmd-data"].standard_normal(6)
    )


def test_resume_equals_straight_run(tmp_path):
    cfg_a = RunConfig.from_dict(tiny_blob())
    a = init_state(cfg_a)
    gan_phase(a)
    dmd_phase(a)
    final_a = final_eval(a)

    cfg_b = RunConfig.from_dict(tiny_blob())
    b = init_state(cfg_b)
    gan_phase(b)
    save_checkpoint(b, tmp_path / "mid")
    resumed = load_checkpoint(tmp_path / "mid")
    dmd_phase(resumed)
    final_b = final_eval(resumed)

    np.testing.assert_array_equal(final_a["samples"], final_b["samples"])
    assert final_a["coverage"] == final_b["coverage"]
    assert final_a["energy_distance"] == final_b["energy_distance"]


def test_checkpoint_corruption_is_loud(tmp_path, tiny_cfg):
    state = init_state(tiny_cfg)
    save_checkpoint(state, tmp_path / "ck")
    with pytest.raises(CheckpointError, match="missing manifest"):
        load_checkpoint(tmp_path / "nowhere")

    blob_path = tmp_path / "ck" / "state.bin"
    raw = bytearray(blob_path.read_bytes())
    raw[10] ^= 0xFF
    blob_path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(tmp_path / "ck")


def test_checkpoint_architecture_mismatch_names_section(tmp_path, tiny_cfg):
    state = init_state(tiny_cfg)
    save_checkpoint(state, tmp_path / "ck")
    other = RunConfig.from_dict(
        tiny_blob(nets={"student_hidden": [8, 8]}, pretrain={"iters": 1})
    )
    with pytest.raises(CheckpointError, match="student_params"):
        load_checkpoint(tmp_path / "ck", other)


def test_ablation_matrix_validates_seeds(tiny_cfg):
    with pytest.raises(ConfigError, match=">= 3 seeds"):
        run_ablation_matrix(tiny_cfg, [1, 2])
    with pytest.raises(ConfigError, match="distinct"):
        run_ablation_matrix(tiny_cfg, [1, 2, 2])


def test_ablation_matrix_summary_and_artifacts(tmp_path):
    cfg = RunConfig.from_dict(
        tiny_blob(teacher={"iters": 30}, pretrain={"iters": 20},
                  gan={"iters": 4}, dmd={"iters": 3})
    )
    rows = {"gan_only": ABLATION_ROWS["gan_only"], "plain": ABLATION_ROWS["plain"]}
    summary = run_ablation_matrix(cfg, [1, 2, 3], tmp_path / "mx", rows=rows)
    assert set(summary["rows"]) == {"gan_only", "plain"}
    assert summary["seeds"] == [1, 2, 3]
    for name, row in summary["rows"].items():
        assert row["failures"] == 0
        assert isinstance(row["median_coverage"], float)
        assert set(row["per_seed"]) == {"1", "2", "3"}
        for rep in row["per_seed"].values():
            assert "samples" not in rep
    assert (tmp_path / "mx" / "matrix.json").exists()
    row_cfg = json.loads((tmp_path / "mx" / "plain_seed2" / "resolved_config.json").read_text())
    assert row_cfg["seed"] == 2
    assert row_cfg["eval_seed"] == cfg.eval_seed + 2
    assert row_cfg["ablation"] == {"gan_init": True, "dmd": True, "soften": False}
    # gan_only rows stop before distribution matching
    gan_only_rep = json.loads(
        (tmp_path / "mx" / "gan_only_seed1" / "report.json").read_text()
    )
    assert gan_only_rep["iterations"]["dmd"] == 0
