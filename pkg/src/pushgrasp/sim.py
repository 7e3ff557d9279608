"""Deterministic 2D top-down tabletop world.

Quasi-static dynamics: pushes are pure translations swept in substeps with
sequential overlap resolution (the object farther along the push direction
moves, pairs processed in ascending id order, fixed point capped at 50
iterations then clamped). Grasps are evaluated by an antipodal
parallel-jaw feasibility check; a feasible grasp removes the object, an
infeasible one displaces whatever the finger rectangles landed on.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from . import frames, geometry
from .util import rng_for

# palette index 0 is reserved for the goal object and never assigned to
# non-goal objects, so color segmentation of the goal is exact.
PALETTE = np.array(
    [
        [0.15, 0.75, 0.25],  # goal green
        [0.20, 0.35, 0.80],
        [0.85, 0.25, 0.20],
        [0.90, 0.80, 0.20],
        [0.90, 0.55, 0.15],
        [0.55, 0.30, 0.70],
        [0.25, 0.75, 0.75],
        [0.55, 0.40, 0.25],
    ]
)
GOAL_COLOR_ID = 0

SHAPES = ("square", "rectangle", "disc")


class GenerationError(RuntimeError):
    """Scene generation could not satisfy its certificate."""


@dataclass
class SimConfig:
    push_distance: float = 0.03
    pusher_radius: float = 0.01
    contact_tolerance: float = 1e-6
    settle_step: float = 0.005
    workspace_margin: float = 0.05
    jaw_open_width: float = 0.13
    finger_thickness: float = 0.018
    finger_length: float = 0.07
    max_object_height: float = 0.06
    size_min: float = 0.028
    size_max: float = 0.038
    packed_size_min: float = 0.035
    packed_size_max: float = 0.042
    change_window: int = 24
    change_depth_tol: float = 0.01
    change_count_threshold: int = 6
    sweep_resolution: int = 64


@dataclass
class ObjectBody:
    id: int
    shape: str
    half_extents: tuple  # (hx, hy); hx == hy == radius for discs
    height: float
    pose: tuple  # (x, y, theta)
    color_id: int
    is_goal: bool = False

    def footprint(self):
        x, y, theta = self.pose
        hx, hy = self.half_extents
        if self.shape == "disc":
            return ("circle", (x, y, hx))
        return ("poly", geometry.obb_corners(x, y, theta, hx, hy))

    def circumradius(self) -> float:
        hx, hy = self.half_extents
        if self.shape == "disc":
            return hx
        return math.hypot(hx, hy)


@dataclass
class Scene:
    objects: list
    rng_seed: int
    workspace: tuple = ((0.0, 0.0), (1.0, 1.0))

    def goal(self):
        for body in self.objects:
            if body.is_goal:
                return body
        return None

    def body(self, ident: int):
        for body in self.objects:
            if body.id == ident:
                return body
        return None

    def copy(self) -> "Scene":
        return Scene(
            objects=[dataclasses.replace(b) for b in self.objects],
            rng_seed=self.rng_seed,
            workspace=self.workspace,
        )


@dataclass
class PushCommand:
    start: tuple
    direction_index: int
    distance: float = 0.03

    def angle(self) -> float:
        return frames.rotation_angle(self.direction_index)


@dataclass
class GraspCommand:
    center: tuple
    rotation_index: int
    jaw_open_width: float
    finger_thickness: float
    finger_length: float

    def angle(self) -> float:
        return frames.rotation_angle(self.rotation_index)


@dataclass
class GraspResult:
    success: bool
    object_id: int | None
    reason: str


@dataclass
class SceneChangeReport:
    changed: bool
    changed_pixel_count: int
    window: tuple  # (u0, v0, u1, v1), half-open pixel rectangle


def grasp_command(cfg: SimConfig, center, rotation_index: int) -> GraspCommand:
    return GraspCommand(
        center=tuple(center),
        rotation_index=int(rotation_index),
        jaw_open_width=cfg.jaw_open_width,
        finger_thickness=cfg.finger_thickness,
        finger_length=cfg.finger_length,
    )


def in_workspace(scene: Scene, point) -> bool:
    (x0, y0), (x1, y1) = scene.workspace
    return x0 <= point[0] <= x1 and y0 <= point[1] <= y1


def _clamp_body(body: ObjectBody, margin: float):
    x, y, theta = body.pose
    cx = min(max(x, margin), 1.0 - margin)
    cy = min(max(y, margin), 1.0 - margin)
    if cx != x or cy != y:
        body.pose = (cx, cy, theta)


# --- rendering hooks shared with perception ---

def render_depth(scene: Scene, resolution: int, max_height: float):
    items = [(b.footprint(), b.height, b.id) for b in scene.objects]
    depth, top = geometry.raster_footprints(items, resolution)
    return depth / max_height, top


def goal_centroid_pixel(scene: Scene, resolution: int):
    goal = scene.goal()
    if goal is None:
        return (resolution // 2, resolution // 2)
    u, v = frames.world_to_pixel(goal.pose[0], goal.pose[1], resolution)
    return (int(round(u)), int(round(v)))


# --- scene change ---

def scene_change(depth_before, depth_after, goal_centroid_px, cfg: SimConfig) -> SceneChangeReport:
    if depth_before.shape != depth_after.shape:
        raise ValueError("depth grids differ in shape")
    res_u, res_v = depth_before.shape
    w = cfg.change_window
    cu, cv = goal_centroid_px
    u0 = max(0, cu - w // 2)
    v0 = max(0, cv - w // 2)
    u1 = min(res_u, cu + (w + 1) // 2)
    v1 = min(res_v, cv + (w + 1) // 2)
    delta = np.abs(depth_after[u0:u1, v0:v1] - depth_before[u0:u1, v0:v1])
    count = int(np.count_nonzero(delta > cfg.change_depth_tol))
    return SceneChangeReport(
        changed=count >= cfg.change_count_threshold,
        changed_pixel_count=count,
        window=(u0, v0, u1, v1),
    )


# --- push dynamics ---

def step_push(scene: Scene, cmd: PushCommand, cfg: SimConfig,
              resolution: int | None = None):
    resolution = resolution or cfg.sweep_resolution
    goal_px = goal_centroid_pixel(scene, resolution)
    if not in_workspace(scene, cmd.start):
        zero = SceneChangeReport(False, 0, (goal_px[0], goal_px[1], goal_px[0], goal_px[1]))
        return scene.copy(), zero

    depth_before, _ = render_depth(scene, resolution, cfg.max_object_height)
    out = scene.copy()
    angle = cmd.angle()
    dx, dy = math.cos(angle), math.sin(angle)

    n_sub = max(1, int(math.ceil(cmd.distance / (cfg.pusher_radius * 0.5))))
    ds = cmd.distance / n_sub
    px, py = cmd.start
    t_max = 4.0 * max(ds, cfg.pusher_radius)
    # substep 0 resolves objects the pusher lands on before it moves
    for i in range(n_sub + 1):
        pusher = ("circle", (px, py, cfg.pusher_radius))
        for body in out.objects:
            fp = body.footprint()
            if geometry.penetration(fp, pusher) > cfg.contact_tolerance:
                t = geometry.separation_along(fp, pusher, dx, dy, t_max)
                body.pose = (body.pose[0] + t * dx, body.pose[1] + t * dy, body.pose[2])
                _clamp_body(body, cfg.workspace_margin)
        _resolve_along(out.objects, dx, dy, cfg, t_max)
        px += ds * dx
        py += ds * dy

    depth_after, _ = render_depth(out, resolution, cfg.max_object_height)
    report = scene_change(depth_before, depth_after, goal_px, cfg)
    return out, report


def _resolve_along(objects, dx, dy, cfg, t_max, max_iter: int = 50):
    for _ in range(max_iter):
        moved = False
        for i in range(len(objects)):
            for j in range(i + 1, len(objects)):
                a, b = objects[i], objects[j]
                fa, fb = a.footprint(), b.footprint()
                if geometry.penetration(fa, fb) <= cfg.contact_tolerance:
                    continue
                # the member farther along the push direction gives way
                da = a.pose[0] * dx + a.pose[1] * dy
                db = b.pose[0] * dx + b.pose[1] * dy
                mover, fixed_fp = (a, fb) if da > db else (b, fa)
                t = geometry.separation_along(mover.footprint(), fixed_fp, dx, dy, t_max)
                mover.pose = (mover.pose[0] + t * dx, mover.pose[1] + t * dy, mover.pose[2])
                _clamp_body(mover, cfg.workspace_margin)
                moved = True
        if not moved:
            return


# --- grasping ---

def _grasp_parts(cmd: GraspCommand):
    theta = cmd.angle()
    ux, uy = math.cos(theta), math.sin(theta)
    cx, cy = cmd.center
    half_jaw = cmd.jaw_open_width / 2.0
    half_len = cmd.finger_length / 2.0
    half_ft = cmd.finger_thickness / 2.0
    region = ("poly", geometry.obb_corners(cx, cy, theta, half_jaw, half_len))
    offset = half_jaw + half_ft
    fingers = [
        ("poly", geometry.obb_corners(cx + offset * ux, cy + offset * uy, theta, half_ft, half_len)),
        ("poly", geometry.obb_corners(cx - offset * ux, cy - offset * uy, theta, half_ft, half_len)),
    ]
    reach = math.hypot(half_jaw + cmd.finger_thickness, half_len)
    return (ux, uy), region, fingers, reach


def grasp_feasibility(scene: Scene, cmd: GraspCommand, cfg: SimConfig) -> GraspResult:
    """Pure antipodal feasibility check; the sweep applies this pointwise."""
    if not in_workspace(scene, cmd.center):
        return GraspResult(False, None, "out-of-bounds")
    (ux, uy), region, fingers, reach = _grasp_parts(cmd)
    cx, cy = cmd.center

    candidate = None
    candidate_area = 0.0
    near = []
    for body in scene.objects:
        circ = body.circumradius()
        dist = math.hypot(body.pose[0] - cx, body.pose[1] - cy)
        if dist > reach + circ:
            continue
        fp = body.footprint()
        near.append((body, fp))
        area = geometry.intersection_area(fp, region)
        if area > 1e-12 and (candidate is None or area > candidate_area):
            candidate = body
            candidate_area = area
    if candidate is None:
        return GraspResult(False, None, "no-contact")
    for body, fp in near:
        for finger in fingers:
            if geometry.penetration(fp, finger) > cfg.contact_tolerance:
                return GraspResult(False, None, "finger-collision")
    if geometry.extent_along(candidate.footprint(), ux, uy) > cmd.jaw_open_width + 1e-12:
        return GraspResult(False, None, "too-wide")
    return GraspResult(True, candidate.id, "grasped")


def step_grasp(scene: Scene, cmd: GraspCommand, cfg: SimConfig):
    result = grasp_feasibility(scene, cmd, cfg)
    if result.success:
        out = scene.copy()
        out.objects = [b for b in out.objects if b.id != result.object_id]
        return out, result
    if result.reason in ("out-of-bounds", "no-contact"):
        return scene.copy(), result
    # infeasible grasp: descending fingers shove whatever they landed on
    out = scene.copy()
    (ux, uy), _, fingers, reach = _grasp_parts(cmd)
    cx, cy = cmd.center
    for finger in fingers:
        fc = _poly_centroid(finger[1])
        for body in out.objects:
            if math.hypot(body.pose[0] - cx, body.pose[1] - cy) > reach + body.circumradius():
                continue
            fp = body.footprint()
            if geometry.penetration(fp, finger) <= cfg.contact_tolerance:
                continue
            ddx, ddy = body.pose[0] - fc[0], body.pose[1] - fc[1]
            norm = math.hypot(ddx, ddy)
            if norm < 1e-9:
                ddx, ddy = ux, uy
            else:
                ddx, ddy = ddx / norm, ddy / norm
            t_max = cmd.finger_thickness + 2.0 * body.circumradius()
            t = geometry.separation_along(fp, finger, ddx, ddy, t_max)
            body.pose = (body.pose[0] + t * ddx, body.pose[1] + t * ddy, body.pose[2])
            _clamp_body(body, cfg.workspace_margin)
    _resolve_pairwise(out.objects, cfg)
    return out, result


def _poly_centroid(pts):
    return (sum(p[0] for p in pts) / len(pts), sum(p[1] for p in pts) / len(pts))


def _resolve_pairwise(objects, cfg: SimConfig, max_iter: int = 50):
    for _ in range(max_iter):
        moved = False
        for i in range(len(objects)):
            for j in range(i + 1, len(objects)):
                a, b = objects[i], objects[j]
                fa, fb = a.footprint(), b.footprint()
                if geometry.penetration(fa, fb) <= cfg.contact_tolerance:
                    continue
                ddx, ddy = b.pose[0] - a.pose[0], b.pose[1] - a.pose[1]
                norm = math.hypot(ddx, ddy)
                if norm < 1e-9:
                    ddx, ddy = 1.0, 0.0
                else:
                    ddx, ddy = ddx / norm, ddy / norm
                t_max = 2.0 * (a.circumradius() + b.circumradius())
                t = geometry.separation_along(fb, fa, ddx, ddy, t_max)
                b.pose = (b.pose[0] + t * ddx, b.pose[1] + t * ddy, b.pose[2])
                _clamp_body(b, cfg.workspace_margin)
                moved = True
        if not moved:
            return


# --- exhaustive grasp sweep ---

def grasp_sweep(scene: Scene, cfg: SimConfig, resolution: int | None = None) -> np.ndarray:
    """Grasped object id per (k, u, v), -1 where infeasible.

    Pixels whose decoded center is provably out of reach of every object
    (center-to-centroid distance beyond apparatus reach + circumradius)
    are skipped; such actions cannot contact anything, matching the
    pointwise check's no-contact failure.
    """
    resolution = resolution or cfg.sweep_resolution
    reach = math.hypot(cfg.jaw_open_width / 2.0 + cfg.finger_thickness, cfg.finger_length / 2.0)
    out = np.full((frames.ROTATIONS, resolution, resolution), -1, dtype=np.int32)
    if not scene.objects:
        return out
    centroids = np.array([[b.pose[0], b.pose[1]] for b in scene.objects])
    circs = np.array([b.circumradius() for b in scene.objects])
    for k in range(frames.ROTATIONS):
        uu, vv = np.meshgrid(np.arange(resolution), np.arange(resolution), indexing="ij")
        xs = (vv + 0.5) / resolution
        ys = (uu + 0.5) / resolution
        ang = -frames.rotation_angle(k)
        c, s = math.cos(ang), math.sin(ang)
        wx = 0.5 + c * (xs - 0.5) - s * (ys - 0.5)
        wy = 0.5 + s * (xs - 0.5) + c * (ys - 0.5)
        near = np.zeros((resolution, resolution), dtype=bool)
        for idx in range(len(scene.objects)):
            d2 = (wx - centroids[idx, 0]) ** 2 + (wy - centroids[idx, 1]) ** 2
            near |= d2 <= (reach + circs[idx] + 1e-9) ** 2
        for u, v in zip(*np.nonzero(near)):
            cmd = grasp_command(cfg, (wx[u, v], wy[u, v]), k)
            res = grasp_feasibility(scene, cmd, cfg)
            if res.success:
                out[k, u, v] = res.object_id
    return out


def feasible_goal_grasp_count(scene: Scene, cfg: SimConfig,
                              resolution: int | None = None) -> int:
    goal = scene.goal()
    if goal is None:
        return 0
    sweep = grasp_sweep(scene, cfg, resolution)
    return int(np.count_nonzero(sweep == goal.id))


# --- scene generators ---

def _draw_body(rng, ident: int, cfg: SimConfig, shapes=SHAPES) -> ObjectBody:
    shape = shapes[int(rng.integers(len(shapes)))]
    if shape == "rectangle":
        hx = float(rng.uniform(cfg.size_min, cfg.size_max)) * 1.6
        hy = float(rng.uniform(cfg.size_min, cfg.size_max)) * 0.75
        he = (hx, hy)
    else:
        h = float(rng.uniform(cfg.size_min, cfg.size_max))
        he = (h, h)
    return ObjectBody(
        id=ident,
        shape=shape,
        half_extents=he,
        height=float(rng.uniform(0.02, 0.05)),
        pose=(0.5, 0.5, float(rng.uniform(0.0, 2.0 * math.pi))),
        color_id=1 + int(rng.integers(len(PALETTE) - 1)),
        is_goal=False,
    )


def _mark_goal(objects, goal_index: int):
    for body in objects:
        body.is_goal = body.id == goal_index
        if body.is_goal:
            body.color_id = GOAL_COLOR_ID


def _spiral_cells(count: int):
    """Deterministic cell offsets: center, then rings with edge-adjacent
    cells before diagonals."""
    cells = [(0, 0)]
    ring = 1
    while len(cells) < count:
        ring_cells = []
        for dx in range(-ring, ring + 1):
            for dy in range(-ring, ring + 1):
                if max(abs(dx), abs(dy)) == ring:
                    ring_cells.append((dx, dy))
        ring_cells.sort(key=lambda c: (abs(c[0]) + abs(c[1]), math.atan2(c[1], c[0])))
        cells.extend(ring_cells)
        ring += 1
    return cells[:count]


def spawn_packed_scene(n_objects: int, seed: int, cfg: SimConfig | None = None) -> Scene:
    """Jittered tight cluster around the workspace center; for n >= 5 the
    goal cell is interior and generation retries (derived seeds) until the
    exhaustive sweep certifies that no goal grasp is feasible."""
    if n_objects < 2:
        raise ValueError("packed scene needs at least 2 objects")
    cfg = cfg or SimConfig()
    for attempt in range(100):
        rng = rng_for(seed, attempt, "packed")
        gap = float(rng.uniform(0.003, 0.007))
        pitch = 2.0 * cfg.packed_size_max + gap
        cells = _spiral_cells(n_objects)
        objects = []
        for ident, (dx, dy) in enumerate(cells):
            h = float(rng.uniform(cfg.packed_size_min, cfg.packed_size_max))
            shape = "square" if rng.random() < 0.7 else "disc"
            jx = float(rng.uniform(-0.0015, 0.0015))
            jy = float(rng.uniform(-0.0015, 0.0015))
            objects.append(
                ObjectBody(
                    id=ident,
                    shape=shape,
                    half_extents=(h, h),
                    height=float(rng.uniform(0.02, 0.05)),
                    pose=(0.5 + dx * pitch + jx, 0.5 + dy * pitch + jy,
                          float(rng.uniform(-0.04, 0.04))),
                    color_id=1 + int(rng.integers(len(PALETTE) - 1)),
                    is_goal=False,
                )
            )
        _mark_goal(objects, 0)
        scene = Scene(objects=objects, rng_seed=seed)
        _resolve_pairwise(scene.objects, cfg)
        if n_objects < 5 or feasible_goal_grasp_count(scene, cfg) == 0:
            return scene
    raise GenerationError(
        f"packed scene ({n_objects} objects, seed {seed}): no ungraspable "
        "arrangement found in 100 attempts; object sizes and count are inconsistent"
    )


def spawn_pile_scene(n_objects: int, seed: int, cfg: SimConfig | None = None) -> Scene:
    """Sequential central drops; each drop settles by stepping overlapping
    objects radially outward until interpenetration is within tolerance."""
    if n_objects < 1:
        raise ValueError("pile scene needs at least 1 object")
    cfg = cfg or SimConfig()
    rng = rng_for(seed, "pile")
    objects = []
    for ident in range(n_objects):
        body = _draw_body(rng, ident, cfg)
        body.pose = (
            0.5 + float(rng.normal(0.0, 0.03)),
            0.5 + float(rng.normal(0.0, 0.03)),
            body.pose[2],
        )
        _clamp_body(body, cfg.workspace_margin)
        objects.append(body)
        _settle_radial(objects, cfg, rng)
    goal_index = int(rng.integers(n_objects))
    _mark_goal(objects, goal_index)
    return Scene(objects=objects, rng_seed=seed)


def _settle_radial(objects, cfg: SimConfig, rng, max_iter: int = 100000):
    for _ in range(max_iter):
        settled = True
        for i in range(len(objects)):
            for j in range(i + 1, len(objects)):
                a, b = objects[i], objects[j]
                if geometry.penetration(a.footprint(), b.footprint()) <= cfg.contact_tolerance:
                    continue
                settled = False
                mover = b
                ddx, ddy = mover.pose[0] - 0.5, mover.pose[1] - 0.5
                norm = math.hypot(ddx, ddy)
                if norm < 1e-9:
                    ang = float(rng.uniform(0.0, 2.0 * math.pi))
                    ddx, ddy = math.cos(ang), math.sin(ang)
                else:
                    ddx, ddy = ddx / norm, ddy / norm
                before = mover.pose
                mover.pose = (before[0] + cfg.settle_step * ddx,
                              before[1] + cfg.settle_step * ddy, before[2])
                _clamp_body(mover, cfg.workspace_margin)
                if math.hypot(mover.pose[0] - before[0], mover.pose[1] - before[1]) < cfg.settle_step * 0.5:
                    # pinned at the margin: the partner retreats instead
                    a.pose = (a.pose[0] - cfg.settle_step * ddx,
                              a.pose[1] - cfg.settle_step * ddy, a.pose[2])
                    _clamp_body(a, cfg.workspace_margin)
        if settled:
            return
    raise RuntimeError("pile settling failed to converge")


def spawn_sparse_scene(n_objects: int, seed: int, cfg: SimConfig | None = None,
                       min_gap: float = 0.004) -> Scene:
    """Random scattered scene: uniform placement rejecting only footprint
    overlap, so objects are mostly free-standing but occasionally adjacent
    (adjacency is what teaches the grasp net that blocked goals differ
    from free ones). Used for the grasp-training stages."""
    if n_objects < 1:
        raise ValueError("sparse scene needs at least 1 object")
    cfg = cfg or SimConfig()
    rng = rng_for(seed, "sparse")
    lo, hi = cfg.workspace_margin + 0.08, 1.0 - cfg.workspace_margin - 0.08
    objects = []
    for ident in range(n_objects):
        body = _draw_body(rng, ident, cfg)
        while True:
            x, y = float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi))
            body.pose = (x, y, body.pose[2])
            fp = body.footprint()
            if all(geometry.penetration(fp, other.footprint()) <= -min_gap
                   for other in objects):
                break
        objects.append(body)
    goal_index = int(rng.integers(n_objects))
    _mark_goal(objects, goal_index)
    return Scene(objects=objects, rng_seed=seed)


# --- scene files ---

SCENE_FILE_VERSION = 1


def scene_to_dict(scene: Scene, packed_certificate: bool | None = None) -> dict:
    data = {
        "version": SCENE_FILE_VERSION,
        "seed": scene.rng_seed,
        "workspace": [list(scene.workspace[0]), list(scene.workspace[1])],
        "objects": [
            {
                "id": b.id,
                "shape": b.shape,
                "half_extents": list(b.half_extents),
                "height": b.height,
                "pose": list(b.pose),
                "color_id": b.color_id,
                "is_goal": b.is_goal,
            }
            for b in scene.objects
        ],
    }
    if packed_certificate is not None:
        data["packed_certificate"] = packed_certificate
    return data


def scene_from_dict(data: dict) -> Scene:
    if data.get("version") != SCENE_FILE_VERSION:
        raise ValueError(f"unsupported scene file version: {data.get('version')!r}")
    objects = [
        ObjectBody(
            id=o["id"],
            shape=o["shape"],
            half_extents=tuple(o["half_extents"]),
            height=o["height"],
            pose=tuple(o["pose"]),
            color_id=o["color_id"],
            is_goal=o["is_goal"],
        )
        for o in data["objects"]
    ]
    ws = data["workspace"]
    return Scene(objects=objects, rng_seed=data["seed"],
                 workspace=(tuple(ws[0]), tuple(ws[1])))


def save_scene(scene: Scene, path, packed_certificate: bool | None = None):
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene, packed_certificate), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_scene(path) -> Scene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))
