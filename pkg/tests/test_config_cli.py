import json
import os
import signal
import subprocess
import sys
import time

import numpy as np
import pytest

from pushgrasp import cli, config, evaluation, nets, perception, plots, runstore, sim

SMALL_NET = ["--set", "net.tower_depth=2", "--set", "net.tower_width=8,12",
             "--set", "net.head_channels=12", "--set", "net.grasp_threshold=0.55"]


def run_cli(args):
    return cli.main([str(a) for a in args])


# --- config machinery ---

def test_build_config_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("net.grasp_threshold=0.9\nlearn.batch_size=8\n")
    cfg = config.build_config(
        config_file=str(cfg_file),
        set_overrides={"net.grasp_threshold": "0.7"},
        environ={"PUSHGRASP_LEARN__BATCH_SIZE": "6"})
    assert cfg.net.grasp_threshold == 0.7  # --set beats env beats file
    assert cfg.learn.batch_size == 6


def test_unknown_key_rejected():
    with pytest.raises(nets.ConfigurationError):
        config.build_config(set_overrides={"sim.gravity": "9.8"})


def test_snapshot_roundtrip(tmp_path):
    cfg = config.build_config(set_overrides={"seed": "5", "net.tower_width": "8,16,32,64"})
    path = tmp_path / "snap"
    config.save_snapshot(cfg, path)
    loaded = config.load_snapshot(path)
    assert loaded.flat() == cfg.flat()
    assert loaded.hash() == cfg.hash()


def test_resolution_consistency_enforced():
    with pytest.raises(nets.ConfigurationError):
        config.build_config(set_overrides={"perception.resolution": "128"})


def test_cli_bad_set_syntax(capsys):
    code = run_cli(["eval", "--scenario", "packed", "--n-objects", "5",
                    "--set", "oops"])
    assert code == cli.EXIT_CODES["config"]
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config"


# --- gen-scenes ---

def test_gen_scenes_deterministic_and_certified(tmp_path, sim_cfg):
    out1, out2 = tmp_path / "c1", tmp_path / "c2"
    for out in (out1, out2):
        assert run_cli(["gen-scenes", "--scenario", "packed", "--n-objects", 5,
                        "--count", 3, "--base-seed", 8, "--out", out]) == 0
    files = sorted(os.listdir(out1))
    assert len(files) == 3
    for name in files:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        data = json.loads((out1 / name).read_text())
        assert data["packed_certificate"] is True
        # oracle sweep confirms the flag
        scene = sim.scene_from_dict(data)
        assert sim.feasible_goal_grasp_count(scene, sim_cfg) == 0


def test_gen_scenes_empty_corpus(tmp_path):
    out = tmp_path / "empty"
    assert run_cli(["gen-scenes", "--scenario", "pile", "--n-objects", 10,
                    "--count", 0, "--out", out]) == 0
    assert os.listdir(out) == []


# --- training runs ---

TRAIN_OVERRIDES = SMALL_NET + [
    "--set", "learn.episodes_grasp_agnostic=6",
    "--set", "learn.episodes_grasp_explore=4",
    "--set", "learn.episodes_push_training=2",
    "--set", "learn.checkpoint_every=3",
]


def test_train_run_directory_contents(tmp_path):
    run_dir = tmp_path / "run"
    assert run_cli(["train", "--stage", "grasp_agnostic", "--run-dir", run_dir,
                    "--quiet", "--seed", 3] + TRAIN_OVERRIDES) == 0
    assert (run_dir / "config.snapshot").exists()
    records = [json.loads(l) for l in (run_dir / "logs" / "actions.jsonl").read_text().splitlines()]
    episodes = {r["episode"] for r in records if "episode" in r and "event" not in r}
    assert episodes == set(range(6))
    cks = [f for f in os.listdir(run_dir / "checkpoints") if f.endswith(".pt")]
    assert cks  # at least one checkpoint
    meta = json.loads((run_dir / "checkpoints" / (sorted(cks)[-1] + ".json")).read_text())
    for key in ("version", "stage", "step", "episode", "config_hash"):
        assert key in meta


def test_train_push_requires_checkpoint(tmp_path, capsys):
    code = run_cli(["train", "--stage", "push_training", "--run-dir",
                    tmp_path / "r", "--quiet"] + TRAIN_OVERRIDES)
    assert code == cli.EXIT_CODES["store"]
    err = json.loads(capsys.readouterr().err)
    assert "checkpoint" in err["message"]


def test_train_config_mismatch_refused(tmp_path, capsys):
    run_dir = tmp_path / "run"
    assert run_cli(["train", "--stage", "grasp_agnostic", "--run-dir", run_dir,
                    "--quiet"] + TRAIN_OVERRIDES) == 0
    code = run_cli(["train", "--stage", "grasp_agnostic", "--run-dir", run_dir,
                    "--quiet", "--seed", 99] + TRAIN_OVERRIDES)
    assert code == cli.EXIT_CODES["store"]
    assert "hash" in json.loads(capsys.readouterr().err)["message"]


def test_kill_and_resume_contiguous_episodes(tmp_path):
    run_dir = tmp_path / "run"
    args = [sys.executable, "-m", "pushgrasp.cli", "train", "--stage",
            "grasp_agnostic", "--run-dir", str(run_dir), "--quiet",
            "--set", "learn.episodes_grasp_agnostic=40",
            "--set", "learn.checkpoint_every=5"] + SMALL_NET
    proc = subprocess.Popen(args, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    deadline = time.time() + 120
    while time.time() < deadline:
        cks = list((run_dir / "checkpoints").glob("*.pt")) if (run_dir / "checkpoints").exists() else []
        if len(cks) >= 2:
            break
        time.sleep(0.5)
    proc.send_signal(signal.SIGKILL)
    proc.wait()
    assert list((run_dir / "checkpoints").glob("*.pt")), "no checkpoint before kill"

    code = run_cli(["train", "--stage", "grasp_agnostic", "--run-dir", run_dir,
                    "--resume", "--quiet",
                    "--set", "learn.episodes_grasp_agnostic=40",
                    "--set", "learn.checkpoint_every=5"] + SMALL_NET)
    assert code == 0
    records = [json.loads(l) for l in (run_dir / "logs" / "actions.jsonl").read_text().splitlines()]
    episodes = sorted({r["episode"] for r in records if "episode" in r and "event" not in r})
    assert episodes == list(range(40))


# --- eval / replay ---

def eval_random(tmp_path, n_scenes=3, extra=()):
    out = tmp_path / "eval"
    code = run_cli(["eval", "--agent", "random", "--scenario", "pile",
                    "--n-objects", 6, "--n-scenes", n_scenes, "--base-seed", 5,
                    "--out", out, "--set", "eval.action_cap=8", *extra])
    assert code == 0
    return out


def test_eval_single_scene_stderr_absent(tmp_path):
    out = eval_random(tmp_path, n_scenes=1)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["C_stderr"] is None


def test_replay_fresh_record_reproduces(tmp_path, capsys):
    out = eval_random(tmp_path)
    code = run_cli(["replay", "--records", out / "records.jsonl", "--index", 1,
                    "--set", "eval.action_cap=8"])
    assert code == 0
    assert "replay ok" in capsys.readouterr().out


def test_replay_divergence_under_altered_config(tmp_path, capsys):
    out = eval_random(tmp_path)
    code = run_cli(["replay", "--records", out / "records.jsonl", "--index", 0,
                    "--set", "eval.action_cap=8", "--set", "sim.push_distance=0.06"])
    captured = capsys.readouterr()
    if code == 0:
        # a record with no pushes cannot diverge under a push-length change
        rec = json.loads((out / "records.jsonl").read_text().splitlines()[0])
        assert all(a["primitive"] != "push" for a in rec["actions"])
    else:
        assert code == cli.EXIT_CODES["divergence"]
        assert "divergence" in captured.out


def test_replay_corrupt_file(tmp_path, capsys):
    out = eval_random(tmp_path)
    path = out / "records.jsonl"
    lines = path.read_text().splitlines()
    lines[1] = "{broken json"
    path.write_text("\n".join(lines) + "\n")
    code = run_cli(["replay", "--records", path, "--index", 0])
    assert code == cli.EXIT_CODES["store"]
    err = json.loads(capsys.readouterr().err)
    assert ":2:" in err["message"]  # line number of the corrupt record


# --- plots ---

def test_plot_curves_and_partial_warning(tmp_path, capsys):
    run_dir = tmp_path / "run"
    assert run_cli(["train", "--stage", "grasp_agnostic", "--run-dir", run_dir,
                    "--quiet"] + TRAIN_OVERRIDES) == 0
    # corrupt one record: drop a required field
    log_path = run_dir / "logs" / "actions.jsonl"
    records = log_path.read_text().splitlines()
    broken = json.loads(records[0])
    broken.pop("grasp_success", None)
    records.insert(0, json.dumps(broken))
    log_path.write_text("\n".join(records) + "\n")

    assert run_cli(["plot", "--run-dir", run_dir, "--kind", "curves"]) == 0
    captured = capsys.readouterr()
    assert "warning" in captured.err
    assert (run_dir / "plots" / "curves_grasp_agnostic.png").exists()


def test_plot_heatmap_masked_overlay(tmp_path, sim_cfg):
    run_dir = tmp_path / "run"
    assert run_cli(["train", "--stage", "grasp_agnostic", "--run-dir", run_dir,
                    "--quiet"] + TRAIN_OVERRIDES) == 0
    assert run_cli(["plot", "--run-dir", run_dir, "--kind", "heatmap"]
                   + TRAIN_OVERRIDES) == 0
    assert (run_dir / "plots" / "heatmap_grasp.png").exists()
    assert (run_dir / "plots" / "heatmap_push.png").exists()

    # overlay support assertion: the collapsed base-frame map only shows
    # through the mask
    cfg = config.build_config(set_overrides=dict(
        s.split("=") for s in [a for a in TRAIN_OVERRIDES if "=" in a]))
    ck = runstore.RunDirectory(str(run_dir)).latest_checkpoint()
    grasp, _, _, _ = nets.load_checkpoint(ck)
    scene = sim.spawn_packed_scene(5, 0, cfg.sim)
    obs = perception.render(scene, 64, cfg.sim.max_object_height)
    stack = perception.build_rotated_stack(obs)
    qmap = nets.forward_qmaps(grasp, stack, "grasp")
    base = plots._base_frame_qmax(qmap)
    overlay = np.zeros_like(base)
    overlay[obs.goal_mask] = 1.0
    alpha = overlay * obs.goal_mask
    assert np.all(alpha[~obs.goal_mask] == 0)


def test_plot_episode_strip(tmp_path):
    run_dir = tmp_path / "run"
    os.makedirs(run_dir)
    out = eval_random(tmp_path)
    assert run_cli(["plot", "--run-dir", run_dir, "--kind", "episode_strip",
                    "--records", out / "records.jsonl", "--index", 0]) == 0
    assert (run_dir / "plots" / "episode_strip.png").exists()


# --- exit codes ---

def test_checkpoint_error_exit_code(tmp_path, capsys):
    missing = tmp_path / "nope.pt"
    code = run_cli(["eval", "--checkpoint", missing, "--scenario", "packed",
                    "--n-objects", 5, "--n-scenes", 1])
    assert code == cli.EXIT_CODES["checkpoint"]
    assert json.loads(capsys.readouterr().err)["error"] == "checkpoint"
