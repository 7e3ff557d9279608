"""Orthographic observations, the 16-rotation stack, and action decoding.

Color/depth use bilinear resampling under rotation, masks nearest-neighbor
so they stay binary. Frame k=0 is the identity view; the same convention
constants (frames module) drive rotation, decoding and encoding, which is
what makes Q maps comparable across rotations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.ndimage import map_coordinates

from . import frames, sim


@dataclass
class PerceptionConfig:
    resolution: int = 64
    color_tolerance: float = 0.05


@dataclass
class Observation:
    color: np.ndarray      # (H, W, 3) in [0, 1]
    depth: np.ndarray      # (H, W) in [0, 1], normalized by max object height
    goal_mask: np.ndarray  # (H, W) bool, color-segmented
    all_mask: np.ndarray   # (H, W) bool
    resolution: int

    def replace_goal_mask(self, mask: np.ndarray) -> "Observation":
        return Observation(self.color, self.depth, mask.astype(bool),
                           self.all_mask, self.resolution)


@dataclass
class RotatedStack:
    color: np.ndarray      # (16, H, W, 3)
    depth: np.ndarray      # (16, H, W)
    goal_mask: np.ndarray  # (16, H, W) bool
    all_mask: np.ndarray   # (16, H, W) bool


def render(scene: sim.Scene, resolution: int, max_height: float,
           color_tolerance: float = 0.05) -> Observation:
    """Top-down painter's render; the goal mask is the color-segmented one
    the networks consume (the id-based raster is goal_visible_mask)."""
    if resolution < 32:
        raise ValueError("resolution must be >= 32")
    depth, top = sim.render_depth(scene, resolution, max_height)
    color = np.zeros((resolution, resolution, 3), dtype=np.float64)
    covered = top >= 0
    if covered.any():
        color_ids = np.zeros_like(top)
        for body in scene.objects:
            color_ids[top == body.id] = body.color_id
        color[covered] = sim.PALETTE[color_ids[covered]]
    goal_mask = goal_mask_from_color(color, color_tolerance)
    return Observation(color=color, depth=depth, goal_mask=goal_mask,
                       all_mask=covered, resolution=resolution)


def goal_mask_from_color(color: np.ndarray, tolerance: float = 0.05) -> np.ndarray:
    goal_rgb = sim.PALETTE[sim.GOAL_COLOR_ID]
    return np.all(np.abs(color - goal_rgb) <= tolerance, axis=-1)


def goal_visible_mask(scene: sim.Scene, resolution: int) -> np.ndarray:
    """Ground-truth goal pixels from object ids; test oracle for the
    color-segmented mask."""
    goal = scene.goal()
    if goal is None:
        return np.zeros((resolution, resolution), dtype=bool)
    _, top = sim.render_depth(scene, resolution, 1.0)
    return top == goal.id


def _source_coords(k: int, resolution: int):
    """Pixel coordinates in the base frame sampled at each pixel of frame k."""
    uu, vv = np.meshgrid(np.arange(resolution), np.arange(resolution), indexing="ij")
    xs = (vv + 0.5) / resolution
    ys = (uu + 0.5) / resolution
    ang = -frames.rotation_angle(k)
    c, s = math.cos(ang), math.sin(ang)
    wx = 0.5 + c * (xs - 0.5) - s * (ys - 0.5)
    wy = 0.5 + s * (xs - 0.5) + c * (ys - 0.5)
    rows = wy * resolution - 0.5
    cols = wx * resolution - 0.5
    return rows, cols


def rotate_image(image: np.ndarray, k: int, binary: bool = False) -> np.ndarray:
    res = image.shape[0]
    rows, cols = _source_coords(k, res)
    order = 0 if binary else 1
    if image.ndim == 3:
        out = np.stack(
            [map_coordinates(image[..., c], [rows, cols], order=order, cval=0.0)
             for c in range(image.shape[-1])], axis=-1)
        return out
    if binary:
        return map_coordinates(image.astype(np.uint8), [rows, cols],
                               order=0, cval=0).astype(bool)
    return map_coordinates(image, [rows, cols], order=1, cval=0.0)


def build_rotated_stack(obs: Observation) -> RotatedStack:
    n = frames.ROTATIONS
    res = obs.resolution
    color = np.zeros((n, res, res, 3))
    depth = np.zeros((n, res, res))
    goal = np.zeros((n, res, res), dtype=bool)
    allm = np.zeros((n, res, res), dtype=bool)
    for k in range(n):
        color[k] = rotate_image(obs.color, k)
        depth[k] = rotate_image(obs.depth, k)
        goal[k] = rotate_image(obs.goal_mask, k, binary=True)
        allm[k] = rotate_image(obs.all_mask, k, binary=True)
    return RotatedStack(color=color, depth=depth, goal_mask=goal, all_mask=allm)


def decode_action(primitive: str, k: int, u: int, v: int, resolution: int):
    """World pose (x, y, angle) named by pixel (u, v) of rotated frame k."""
    if not 0 <= k < frames.ROTATIONS:
        raise ValueError(f"rotation index {k} out of range")
    if not (0 <= u < resolution and 0 <= v < resolution):
        raise ValueError(f"pixel ({u}, {v}) out of bounds for resolution {resolution}")
    if primitive not in ("grasp", "push"):
        raise ValueError(f"unknown primitive {primitive!r}")
    x, y = frames.decode_pixel(k, u, v, resolution)
    return (x, y, frames.rotation_angle(k))


def encode_action(k: int, x: float, y: float, resolution: int):
    return frames.encode_pixel(k, x, y, resolution)


# --- snapshot export ---

def save_observation_pngs(obs: Observation, directory, prefix: str = "obs"):
    import os

    paths = {}
    os.makedirs(directory, exist_ok=True)

    color8 = np.clip(np.round(obs.color * 255.0), 0, 255).astype(np.uint8)
    paths["color"] = os.path.join(directory, f"{prefix}_color.png")
    Image.fromarray(color8, mode="RGB").save(paths["color"])

    depth16 = np.clip(np.round(obs.depth * 65535.0), 0, 65535).astype(np.uint16)
    paths["depth"] = os.path.join(directory, f"{prefix}_depth.png")
    Image.fromarray(depth16).save(paths["depth"])  # uint16 -> 16-bit grayscale

    for name, mask in (("goal_mask", obs.goal_mask), ("all_mask", obs.all_mask)):
        paths[name] = os.path.join(directory, f"{prefix}_{name}.png")
        Image.fromarray(mask.astype(bool)).convert("1").save(paths[name])
    return paths
