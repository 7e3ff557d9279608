"""Plot emission: training curves, Q-map overlays, and episode strips.

Every plotted number is recomputed from the JSONL logs or the scene/
checkpoint inputs; plots carry no state of their own.
"""

from __future__ import annotations

import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import evaluation, frames, nets, perception, sim

STAGE_ROLLING_WINDOW = {
    "grasp_agnostic": 50,
    "grasp_explore": 50,
    "push_training": 50,
    "alternating": 7,
}


def training_curves(records, out_dir):
    """One smoothed grasp-success curve per stage found in the log.

    Returns (paths, warnings); records missing required fields are skipped
    and reported, producing a partial plot rather than a failure.
    """
    os.makedirs(out_dir, exist_ok=True)
    warnings = []
    per_stage = defaultdict(dict)
    for record in records:
        if "event" in record:
            continue
        missing = [k for k in ("stage", "episode", "grasp_success") if k not in record]
        if missing:
            warnings.append(f"record skipped; missing fields: {', '.join(missing)}")
            continue
        if record.get("primitive") == "grasp":
            per_stage[record["stage"]][record["episode"]] = bool(record["grasp_success"])
    paths = []
    for stage, by_episode in per_stage.items():
        episodes = sorted(by_episode)
        series = np.array([float(by_episode[e]) for e in episodes])
        window = STAGE_ROLLING_WINDOW.get(stage, 7)
        fig, ax = plt.subplots(figsize=(7, 3))
        ax.plot(episodes, evaluation.smooth(series, "exponential", factor=0.9),
                label="exponential (0.9)")
        ax.plot(episodes, evaluation.smooth(series, "rolling", window=window),
                label=f"rolling mean ({window})")
        ax.set_xlabel("grasp episode")
        ax.set_ylabel("grasp success rate")
        ax.set_ylim(-0.05, 1.05)
        ax.set_title(stage)
        ax.legend(loc="lower right")
        path = os.path.join(out_dir, f"curves_{stage}.png")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths, warnings


def _base_frame_qmax(qmap: nets.QMapStack):
    """Collapse the rotated Q stack into the base frame (max over rotations
    of each map un-rotated)."""
    base = None
    for k in range(frames.ROTATIONS):
        unrot = perception.rotate_image(qmap.values[k], (frames.ROTATIONS - k) % frames.ROTATIONS)
        base = unrot if base is None else np.maximum(base, unrot)
    return base


def q_heatmaps(checkpoint_path, scene, cfg, out_dir):
    """Masked Q overlays on the color heightmap (test-mode masking)."""
    os.makedirs(out_dir, exist_ok=True)
    grasp, push, _, _ = nets.load_checkpoint(checkpoint_path)
    obs = perception.render(scene, cfg.perception.resolution,
                            cfg.sim.max_object_height,
                            cfg.perception.color_tolerance)
    stack = perception.build_rotated_stack(obs)
    paths = []
    for model, name, mask in ((grasp, "grasp", obs.goal_mask),
                              (push, "push", obs.all_mask)):
        qmap = nets.forward_qmaps(model, stack, name)
        base = _base_frame_qmax(qmap)
        overlay = np.zeros_like(base)
        if mask.any():
            vals = base[mask]
            lo, hi = float(vals.min()), float(vals.max())
            span = hi - lo if hi > lo else 1.0
            overlay[mask] = (base[mask] - lo) / span
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(obs.color)
        heat = np.zeros((*overlay.shape, 4))
        heat[..., 0] = 1.0
        heat[..., 3] = overlay * 0.8 * mask
        ax.imshow(heat)
        ax.set_title(f"{name} Q (masked)")
        ax.axis("off")
        path = os.path.join(out_dir, f"heatmap_{name}.png")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def episode_strip(record: evaluation.EpisodeRecord, cfg, out_dir,
                  max_frames: int = 8):
    """Snapshot sequence of a recorded episode, re-simulated from its seed
    by replaying the recorded actions."""
    os.makedirs(out_dir, exist_ok=True)
    if record.scenario == "packed":
        scene = sim.spawn_packed_scene(record.n_objects, record.seed, cfg.sim)
    elif record.scenario == "pile":
        scene = sim.spawn_pile_scene(record.n_objects, record.seed, cfg.sim)
    else:
        raise ValueError(f"cannot regenerate scenario {record.scenario!r}")

    res = cfg.perception.resolution
    frames_out = [perception.render(scene, res, cfg.sim.max_object_height).color]
    labels = ["start"]
    for action in record.actions:
        if action["primitive"] == "none":
            continue
        x, y = frames.decode_pixel(action["k"], action["u"], action["v"], res)
        if action["primitive"] == "push":
            cmd = sim.PushCommand(start=(x, y), direction_index=action["k"],
                                  distance=cfg.sim.push_distance)
            scene, _ = sim.step_push(scene, cmd, cfg.sim, res)
        else:
            cmd = sim.grasp_command(cfg.sim, (x, y), action["k"])
            scene, _ = sim.step_grasp(scene, cmd, cfg.sim)
        frames_out.append(perception.render(scene, res, cfg.sim.max_object_height).color)
        labels.append(action["primitive"])
    if len(frames_out) > max_frames:
        keep = np.linspace(0, len(frames_out) - 1, max_frames).astype(int)
        frames_out = [frames_out[i] for i in keep]
        labels = [labels[i] for i in keep]
    fig, axes = plt.subplots(1, len(frames_out), figsize=(2.2 * len(frames_out), 2.5))
    if len(frames_out) == 1:
        axes = [axes]
    for ax, frame, label in zip(axes, frames_out, labels):
        ax.imshow(frame)
        ax.set_title(label, fontsize=8)
        ax.axis("off")
    path = os.path.join(out_dir, "episode_strip.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
