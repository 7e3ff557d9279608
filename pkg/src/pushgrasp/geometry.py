"""2D footprint geometry: overlap tests, penetration depths, areas, rasters.

Footprints are either oriented rectangles ("poly", corner list, CCW) or
circles ("circle", (cx, cy, r)). All coordinates are workspace units.
Penetration depths are exact (SAT for rectangle pairs, signed distance for
circle cases); intersection areas use polygon clipping, with circles
approximated by a regular 32-gon for area purposes only.
"""

from __future__ import annotations

import math

import numpy as np

CIRCLE_AREA_SIDES = 32


def obb_corners(cx: float, cy: float, theta: float, hx: float, hy: float):
    c, s = math.cos(theta), math.sin(theta)
    ux, uy = c * hx, s * hx
    vx, vy = -s * hy, c * hy
    return [
        (cx + ux + vx, cy + uy + vy),
        (cx - ux + vx, cy - uy + vy),
        (cx - ux - vx, cy - uy - vy),
        (cx + ux - vx, cy + uy - vy),
    ]


def circle_polygon(cx: float, cy: float, r: float, sides: int = CIRCLE_AREA_SIDES):
    step = 2.0 * math.pi / sides
    return [(cx + r * math.cos(i * step), cy + r * math.sin(i * step)) for i in range(sides)]


def polygon_area(pts) -> float:
    a = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        a += x0 * y1 - x1 * y0
    return 0.5 * abs(a)


def clip_polygon(subject, clip):
    """Sutherland-Hodgman clip of `subject` by convex CCW polygon `clip`."""
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            return []
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        input_pts = output
        output = []
        for j in range(len(input_pts)):
            px, py = input_pts[j]
            qx, qy = input_pts[(j - 1) % len(input_pts)]
            p_in = ex * (py - ay) - ey * (px - ax) >= 0.0
            q_in = ex * (qy - ay) - ey * (qx - ax) >= 0.0
            if p_in:
                if not q_in:
                    output.append(_line_intersect(qx, qy, px, py, ax, ay, bx, by))
                output.append((px, py))
            elif q_in:
                output.append(_line_intersect(qx, qy, px, py, ax, ay, bx, by))
    return output


def _line_intersect(x1, y1, x2, y2, x3, y3, x4, y4):
    dx1, dy1 = x2 - x1, y2 - y1
    dx2, dy2 = x4 - x3, y4 - y3
    denom = dx1 * dy2 - dy1 * dx2
    if denom == 0.0:
        return (x2, y2)
    t = ((x3 - x1) * dy2 - (y3 - y1) * dx2) / denom
    return (x1 + t * dx1, y1 + t * dy1)


def _ensure_ccw(pts):
    a = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        a += x0 * y1 - x1 * y0
    return pts if a >= 0.0 else list(reversed(pts))


def intersection_area(fp_a, fp_b) -> float:
    pa = _as_area_polygon(fp_a)
    pb = _as_area_polygon(fp_b)
    clipped = clip_polygon(pa, pb)
    if len(clipped) < 3:
        return 0.0
    return polygon_area(clipped)


def _as_area_polygon(fp):
    kind, data = fp
    if kind == "poly":
        return _ensure_ccw(data)
    cx, cy, r = data
    return circle_polygon(cx, cy, r)


# --- penetration depths (exact; > 0 means overlapping) ---

def penetration(fp_a, fp_b) -> float:
    ka, da = fp_a
    kb, db = fp_b
    if ka == "circle" and kb == "circle":
        ax, ay, ar = da
        bx, by, br = db
        return (ar + br) - math.hypot(bx - ax, by - ay)
    if ka == "circle":
        return _penetration_circle_poly(da, db)
    if kb == "circle":
        return _penetration_circle_poly(db, da)
    return _penetration_poly_poly(da, db)


def _penetration_circle_poly(circle, poly) -> float:
    cx, cy, r = circle
    # signed distance from circle center to the polygon boundary
    # (negative inside); penetration = r - signed distance
    n = len(poly)
    inside = True
    min_edge = math.inf
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        # outward side test relies on CCW winding
        cross = ex * (cy - ay) - ey * (cx - ax)
        if cross < 0.0:
            inside = False
        d = _point_segment_distance(cx, cy, ax, ay, bx, by)
        if d < min_edge:
            min_edge = d
    signed = -min_edge if inside else min_edge
    return r - signed


def _point_segment_distance(px, py, ax, ay, bx, by) -> float:
    ex, ey = bx - ax, by - ay
    ln2 = ex * ex + ey * ey
    if ln2 == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * ex + (py - ay) * ey) / ln2
    t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
    return math.hypot(px - (ax + t * ex), py - (ay + t * ey))


def _penetration_poly_poly(pa, pb) -> float:
    # SAT over the face normals of both rectangles; the minimum projection
    # overlap is the exact minimal translation distance for convex polygons.
    pa = _ensure_ccw(pa)
    pb = _ensure_ccw(pb)
    best = math.inf
    for poly in (pa, pb):
        n = len(poly)
        for i in range(n):
            ax, ay = poly[i]
            bx, by = poly[(i + 1) % n]
            nx, ny = ay - by, bx - ax  # edge normal
            ln = math.hypot(nx, ny)
            if ln == 0.0:
                continue
            nx, ny = nx / ln, ny / ln
            min_a, max_a = _project(pa, nx, ny)
            min_b, max_b = _project(pb, nx, ny)
            overlap = min(max_a, max_b) - max(min_a, min_b)
            if overlap <= 0.0:
                return overlap  # separating axis found
            if overlap < best:
                best = overlap
    return best


def _project(poly, nx, ny):
    lo = hi = poly[0][0] * nx + poly[0][1] * ny
    for x, y in poly[1:]:
        d = x * nx + y * ny
        if d < lo:
            lo = d
        elif d > hi:
            hi = d
    return lo, hi


def extent_along(fp, ux: float, uy: float) -> float:
    """Width of the footprint projected onto unit axis (ux, uy)."""
    kind, data = fp
    if kind == "circle":
        return 2.0 * data[2]
    lo, hi = _project(data, ux, uy)
    return hi - lo


def circumradius(fp) -> float:
    kind, data = fp
    if kind == "circle":
        return data[2]
    cx = sum(p[0] for p in data) / len(data)
    cy = sum(p[1] for p in data) / len(data)
    return max(math.hypot(p[0] - cx, p[1] - cy) for p in data)


def point_segment_distance(px, py, ax, ay, bx, by) -> float:
    return _point_segment_distance(px, py, ax, ay, bx, by)


def separation_along(fp_moving, fp_fixed, dx: float, dy: float,
                     t_max: float, tol: float = 1e-9) -> float:
    """Smallest translation t along unit (dx, dy) that clears fp_moving of
    fp_fixed, found by scan + bisection on the exact penetration test.

    Returns t_max if the overlap does not clear within t_max.
    """
    if penetration(fp_moving, fp_fixed) <= 0.0:
        return 0.0
    lo = 0.0
    hi = None
    t = t_max / 16.0
    while t <= t_max:
        if penetration(_translate(fp_moving, dx * t, dy * t), fp_fixed) <= 0.0:
            hi = t
            break
        lo = t
        t *= 2.0
    if hi is None:
        if penetration(_translate(fp_moving, dx * t_max, dy * t_max), fp_fixed) > 0.0:
            return t_max
        hi = t_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if penetration(_translate(fp_moving, dx * mid, dy * mid), fp_fixed) <= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def _translate(fp, dx, dy):
    kind, data = fp
    if kind == "circle":
        cx, cy, r = data
        return ("circle", (cx + dx, cy + dy, r))
    return ("poly", [(x + dx, y + dy) for x, y in data])


def translate(fp, dx: float, dy: float):
    return _translate(fp, dx, dy)


# --- rasterization (pixel (u, v) = (row, col); x ~ cols, y ~ rows) ---

def pixel_grid(resolution: int):
    coords = (np.arange(resolution) + 0.5) / resolution
    ys = coords[:, None]  # rows
    xs = coords[None, :]  # cols
    return xs, ys


def footprint_mask(fp, resolution: int) -> np.ndarray:
    xs, ys = pixel_grid(resolution)
    kind, data = fp
    if kind == "circle":
        cx, cy, r = data
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    corners = _ensure_ccw(data)
    mask = np.ones((resolution, resolution), dtype=bool)
    n = len(corners)
    for i in range(n):
        ax, ay = corners[i]
        bx, by = corners[(i + 1) % n]
        mask &= (bx - ax) * (ys - ay) - (by - ay) * (xs - ax) >= 0.0
    return mask


def raster_footprints(items, resolution: int):
    """Painter's-algorithm raster of (footprint, height, id) triples.

    Returns (depth, top_id): depth holds the max covering height per pixel,
    top_id the id of the tallest covering footprint (-1 for background).
    Equal heights resolve to the higher id.
    """
    depth = np.zeros((resolution, resolution), dtype=np.float64)
    top_id = np.full((resolution, resolution), -1, dtype=np.int32)
    for fp, height, ident in sorted(items, key=lambda t: (t[1], t[2])):
        mask = footprint_mask(fp, resolution)
        depth[mask] = height
        top_id[mask] = ident
    return depth, top_id
