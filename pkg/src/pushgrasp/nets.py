"""Dual pixel-wise Q networks and masked action selection.

Each net runs three parallel convolution towers (color, depth, goal mask;
single-channel inputs replicated to three channels so the towers share
arity), concatenates their features, applies a 1x1 conv + batch norm +
ReLU stage and a linear 1x1 projection, and bilinearly upsamples back to
input resolution: one scalar Q per pixel per rotation.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import frames
from .perception import RotatedStack


class ConfigurationError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


CHECKPOINT_VERSION = 1


@dataclass
class NetworkConfig:
    tower_depth: int = 4
    tower_width: tuple = (16, 32, 64, 128)
    head_channels: int = 64
    pretrained_backbone: bool = False
    resolution: int = 64
    grasp_threshold: float = 1.8
    rotations: int = 16

    def validate(self):
        if self.rotations != frames.ROTATIONS:
            raise ConfigurationError("rotation count is fixed at 16")
        if len(self.tower_width) != self.tower_depth:
            raise ConfigurationError(
                f"tower_width needs {self.tower_depth} entries, got {len(self.tower_width)}")
        if 2 ** self.tower_depth > self.resolution:
            raise ConfigurationError("tower_depth downsamples below one pixel")
        if self.pretrained_backbone:
            raise ConfigurationError(
                "pretrained full-scale backbone is not available in this build; "
                "use the small-tower configuration")


@dataclass
class ExplorationSchedule:
    epsilon_initial: float = 0.5
    decay: float = 0.9998
    floor: float = 0.1
    actions: int = 0

    def epsilon(self) -> float:
        return max(self.floor, self.epsilon_initial * self.decay ** self.actions)

    def advance(self):
        self.actions += 1


@dataclass
class QMapStack:
    values: np.ndarray  # (16, H, W) float32
    network_id: str


@dataclass
class ActionSpec:
    primitive: str
    k: int
    pixel: tuple
    q_value: float
    decoded_pose: tuple


class _Tower(nn.Module):
    """Strided blocks with a dense-style concatenation inside each level."""

    def __init__(self, widths):
        super().__init__()
        self.downs = nn.ModuleList()
        self.laterals = nn.ModuleList()
        in_ch = 3
        for w in widths:
            self.downs.append(nn.Sequential(
                nn.Conv2d(in_ch, w, 3, stride=2, padding=1),
                nn.BatchNorm2d(w), nn.ReLU(inplace=True)))
            self.laterals.append(nn.Sequential(
                nn.Conv2d(w, w, 3, stride=1, padding=1),
                nn.BatchNorm2d(w), nn.ReLU(inplace=True)))
            in_ch = 2 * w
        self.out_channels = in_ch

    def forward(self, x):
        for down, lateral in zip(self.downs, self.laterals):
            a = down(x)
            x = torch.cat([a, lateral(a)], dim=1)
        return x


class PixelQNetwork(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        config.validate()
        self.config = config
        widths = tuple(config.tower_width)
        self.color_tower = _Tower(widths)
        self.depth_tower = _Tower(widths)
        self.mask_tower = _Tower(widths)
        cat_ch = 3 * self.color_tower.out_channels
        self.head = nn.Sequential(
            nn.Conv2d(cat_ch, config.head_channels, 1),
            nn.BatchNorm2d(config.head_channels), nn.ReLU(inplace=True))
        self.project = nn.Conv2d(config.head_channels, 1, 1)

    def forward(self, color, depth, mask):
        feats = torch.cat([
            self.color_tower(color),
            self.depth_tower(depth),
            self.mask_tower(mask),
        ], dim=1)
        q = self.project(self.head(feats))
        q = F.interpolate(q, size=color.shape[-2:], mode="bilinear", align_corners=False)
        return q[:, 0]


def build_models(config: NetworkConfig, seed: int = 0):
    torch.manual_seed(seed)
    grasp = PixelQNetwork(config)
    torch.manual_seed(seed + 1)
    push = PixelQNetwork(config)
    return grasp, push


def stack_tensors(stack: RotatedStack, dtype=torch.float32):
    color = torch.as_tensor(stack.color, dtype=dtype).permute(0, 3, 1, 2).contiguous()
    depth = torch.as_tensor(stack.depth, dtype=dtype)[:, None].repeat(1, 3, 1, 1)
    mask = torch.as_tensor(stack.goal_mask.astype(np.float32), dtype=dtype)[:, None].repeat(1, 3, 1, 1)
    return color, depth, mask


def forward_qmaps(model: PixelQNetwork, stack: RotatedStack, network_id: str) -> QMapStack:
    """Inference-mode Q maps over all 16 rotations."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        color, depth, mask = stack_tensors(stack)
        values = model(color, depth, mask).numpy().astype(np.float32)
    if was_training:
        model.train()
    return QMapStack(values=values, network_id=network_id)


def forward_single_rotation(model: PixelQNetwork, stack: RotatedStack, k: int):
    """Differentiable forward of one rotation; used by the training step."""
    color, depth, mask = stack_tensors(stack)
    return model(color[k:k + 1], depth[k:k + 1], mask[k:k + 1])[0]


def masked_max(qmap: QMapStack, masks: np.ndarray):
    """Max and argmax of the Q stack restricted to per-rotation masks.

    Returns (value, (k, u, v)) or (None, None) for empty support. Ties
    break lexicographically on (k, u, v) because np.argmax scans C order.
    """
    if not masks.any():
        return None, None
    masked = np.where(masks, qmap.values, -np.inf)
    flat = int(np.argmax(masked))
    idx = np.unravel_index(flat, masked.shape)
    return float(masked[idx]), (int(idx[0]), int(idx[1]), int(idx[2]))


def _unmasked_argmax(qmap: QMapStack):
    flat = int(np.argmax(qmap.values))
    idx = np.unravel_index(flat, qmap.values.shape)
    return float(qmap.values[idx]), (int(idx[0]), int(idx[1]), int(idx[2]))


def _uniform_mask_draw(masks: np.ndarray, rng):
    support = np.flatnonzero(masks.reshape(-1))
    if support.size == 0:
        return None
    flat = int(support[int(rng.integers(support.size))])
    idx = np.unravel_index(flat, masks.shape)
    return (int(idx[0]), int(idx[1]), int(idx[2]))


def _spec(primitive, k, u, v, q, resolution):
    x, y = frames.decode_pixel(k, u, v, resolution)
    return ActionSpec(primitive=primitive, k=k, pixel=(u, v), q_value=q,
                      decoded_pose=(x, y, frames.rotation_angle(k)))


def select_action(grasp_q: QMapStack, push_q: QMapStack, stack: RotatedStack,
                  mode: str, threshold: float,
                  schedule: ExplorationSchedule | None = None,
                  rng=None, grasp_explore_mask: str = "goal"):
    """Threshold-gated primitive choice plus argmax pixel selection.

    Test mode masks grasp Q by the goal mask and push Q by the all-objects
    mask; empty support is a declared no-action (None). Train mode leaves
    the argmax unmasked but still gates the grasp decision on the
    goal-masked max, and substitutes an epsilon-random action drawn from
    the primitive's valid-mask support.
    """
    resolution = grasp_q.values.shape[-1]
    goal_max, goal_arg = masked_max(grasp_q, stack.goal_mask)

    if mode == "test":
        if goal_max is not None and goal_max > threshold:
            return _spec("grasp", *goal_arg, goal_max, resolution)
        push_max, push_arg = masked_max(push_q, stack.all_mask)
        if push_arg is None:
            return None
        return _spec("push", *push_arg, push_max, resolution)

    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    grasping = goal_max is not None and goal_max > threshold
    if grasping:
        value, arg = _unmasked_argmax(grasp_q)
        primitive, qmap = "grasp", grasp_q
    else:
        value, arg = _unmasked_argmax(push_q)
        primitive, qmap = "push", push_q
    if schedule is not None and rng is not None and rng.random() < schedule.epsilon():
        masks = stack.goal_mask if (primitive == "grasp" and grasp_explore_mask == "goal") \
            else stack.all_mask
        drawn = _uniform_mask_draw(masks, rng)
        if drawn is not None:
            arg = drawn
            value = float(qmap.values[arg])
    return _spec(primitive, *arg, value, resolution)


def select_grasp_action(grasp_q: QMapStack, stack: RotatedStack, mode: str,
                        schedule: ExplorationSchedule | None = None,
                        rng=None, explore_mask: str = "goal"):
    """Grasp-only selection for the grasp-training stages (episode = one
    grasp attempt, primitive forced)."""
    resolution = grasp_q.values.shape[-1]
    if mode == "test":
        value, arg = masked_max(grasp_q, stack.goal_mask)
        if arg is None:
            return None
        return _spec("grasp", *arg, value, resolution)
    value, arg = _unmasked_argmax(grasp_q)
    if schedule is not None and rng is not None and rng.random() < schedule.epsilon():
        masks = stack.goal_mask if explore_mask == "goal" else stack.all_mask
        drawn = _uniform_mask_draw(masks, rng)
        if drawn is not None:
            arg = drawn
            value = float(grasp_q.values[arg])
    return _spec("grasp", *arg, value, resolution)


# --- checkpoints ---

def weights_digest(model: nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path, grasp: PixelQNetwork, push: PixelQNetwork,
                    metadata: dict, optimizers: dict | None = None):
    blob = {
        "version": CHECKPOINT_VERSION,
        "net_config": vars(grasp.config) | {"tower_width": list(grasp.config.tower_width)},
        "grasp_state": grasp.state_dict(),
        "push_state": push.state_dict(),
        "optimizers": {k: v.state_dict() for k, v in (optimizers or {}).items()},
    }
    torch.save(blob, path)
    sidecar = {"version": CHECKPOINT_VERSION} | metadata
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Returns (grasp, push, metadata, optimizer_states); refuses version
    mismatches and corrupt files without partial state."""
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has version {blob.get('version') if isinstance(blob, dict) else '?'}; "
            f"this build reads version {CHECKPOINT_VERSION}")
    cfg_dict = dict(blob["net_config"])
    cfg_dict["tower_width"] = tuple(cfg_dict["tower_width"])
    config = NetworkConfig(**cfg_dict)
    grasp = PixelQNetwork(config)
    push = PixelQNetwork(config)
    grasp.load_state_dict(blob["grasp_state"])
    push.load_state_dict(blob["push_state"])
    metadata = {}
    sidecar_path = str(path) + ".json"
    if os.path.exists(sidecar_path):
        with open(sidecar_path) as fh:
            metadata = json.load(fh)
    return grasp, push, metadata, blob.get("optimizers", {})
