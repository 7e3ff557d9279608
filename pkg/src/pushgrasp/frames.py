"""Rotation and pixel/world frame conventions, shared by sim and perception.

There are 16 discrete rotations, 22.5 degrees apart, clockwise from 0.
Frame k is the base frame rotated by k steps; decoding a pixel chosen in
frame k applies the inverse rotation about the workspace center. Pixel
(u, v) is (row, col); world x maps to columns, y to rows, with pixel
centers at (index + 0.5) / resolution.
"""

from __future__ import annotations

import math

ROTATIONS = 16
STEP_RADIANS = 2.0 * math.pi / ROTATIONS
CENTER = (0.5, 0.5)


def rotation_angle(k: int) -> float:
    """World angle (radians) encoded by rotation index k."""
    return k * STEP_RADIANS


def pixel_to_world(u: float, v: float, resolution: int) -> tuple[float, float]:
    return ((v + 0.5) / resolution, (u + 0.5) / resolution)


def world_to_pixel(x: float, y: float, resolution: int) -> tuple[float, float]:
    """Continuous pixel coordinates (row, col); callers round if needed."""
    return (y * resolution - 0.5, x * resolution - 0.5)


def rotate_about_center(x: float, y: float, angle: float) -> tuple[float, float]:
    c, s = math.cos(angle), math.sin(angle)
    dx, dy = x - CENTER[0], y - CENTER[1]
    return (CENTER[0] + c * dx - s * dy, CENTER[1] + s * dx + c * dy)


def decode_pixel(k: int, u: int, v: int, resolution: int) -> tuple[float, float]:
    """World point named by pixel (u, v) of rotated frame k."""
    x, y = pixel_to_world(u, v, resolution)
    return rotate_about_center(x, y, -rotation_angle(k))


def encode_pixel(k: int, x: float, y: float, resolution: int) -> tuple[int, int]:
    """Nearest pixel of frame k naming world point (x, y)."""
    xr, yr = rotate_about_center(x, y, rotation_angle(k))
    u, v = world_to_pixel(xr, yr, resolution)
    return (int(round(u)), int(round(v)))
