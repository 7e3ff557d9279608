import math

import numpy as np
import pytest

from pushgrasp import geometry


def test_penetration_circle_circle():
    a = ("circle", (0.0, 0.0, 0.1))
    b = ("circle", (0.15, 0.0, 0.1))
    assert geometry.penetration(a, b) == pytest.approx(0.05)
    c = ("circle", (0.35, 0.0, 0.1))
    assert geometry.penetration(a, c) <= 0.0


def test_penetration_rect_rect_axis_aligned():
    a = ("poly", geometry.obb_corners(0.0, 0.0, 0.0, 0.1, 0.1))
    b = ("poly", geometry.obb_corners(0.15, 0.0, 0.0, 0.1, 0.1))
    # projection overlap along x: 0.2 - 0.15 = 0.05
    assert geometry.penetration(a, b) == pytest.approx(0.05)
    far = ("poly", geometry.obb_corners(0.5, 0.0, 0.0, 0.1, 0.1))
    assert geometry.penetration(a, far) <= 0.0


def test_penetration_circle_rect_inside_and_outside():
    rect = ("poly", geometry.obb_corners(0.0, 0.0, 0.0, 0.2, 0.2))
    inside = ("circle", (0.0, 0.0, 0.05))
    # center 0.2 from every face, plus radius
    assert geometry.penetration(inside, rect) == pytest.approx(0.25)
    outside = ("circle", (0.3, 0.0, 0.05))
    assert geometry.penetration(outside, rect) == pytest.approx(-0.05)


def test_intersection_area_rect_rect():
    a = ("poly", geometry.obb_corners(0.0, 0.0, 0.0, 0.1, 0.1))
    b = ("poly", geometry.obb_corners(0.1, 0.1, 0.0, 0.1, 0.1))
    assert geometry.intersection_area(a, b) == pytest.approx(0.01)


def test_intersection_area_circle_approximation():
    circle = ("circle", (0.0, 0.0, 0.1))
    big = ("poly", geometry.obb_corners(0.0, 0.0, 0.0, 1.0, 1.0))
    area = geometry.intersection_area(circle, big)
    assert area == pytest.approx(math.pi * 0.01, rel=0.01)


def test_extent_along_rotated_rect():
    theta = 0.3
    fp = ("poly", geometry.obb_corners(0.0, 0.0, theta, 0.2, 0.1))
    expected = 2 * (0.2 * abs(math.cos(theta)) + 0.1 * abs(math.sin(theta)))
    assert geometry.extent_along(fp, 1.0, 0.0) == pytest.approx(expected)
    assert geometry.extent_along(("circle", (0, 0, 0.07)), 0.6, 0.8) == pytest.approx(0.14)


def test_separation_along_matches_closed_form():
    # circle overlapping a fixed circle; moving straight away needs exactly
    # the penetration depth
    moving = ("circle", (0.0, 0.0, 0.1))
    fixed = ("circle", (0.12, 0.0, 0.1))
    t = geometry.separation_along(moving, fixed, -1.0, 0.0, t_max=0.5)
    assert t == pytest.approx(0.08, abs=1e-6)
    after = geometry.translate(moving, -t, 0.0)
    assert geometry.penetration(after, fixed) <= 1e-9


def test_separation_along_no_overlap_is_zero():
    a = ("circle", (0.0, 0.0, 0.05))
    b = ("circle", (0.5, 0.0, 0.05))
    assert geometry.separation_along(a, b, 1.0, 0.0, t_max=0.5) == 0.0


def test_footprint_mask_disc_area():
    fp = ("circle", (0.5, 0.5, 0.2))
    mask = geometry.footprint_mask(fp, 128)
    measured = mask.sum() / 128 ** 2
    assert measured == pytest.approx(math.pi * 0.04, rel=0.05)


def test_raster_painter_order():
    low = ("circle", (0.5, 0.5, 0.2))
    high = ("circle", (0.5, 0.5, 0.1))
    depth, top = geometry.raster_footprints([(low, 0.02, 0), (high, 0.05, 1)], 64)
    center = top[32, 32]
    assert center == 1
    assert depth[32, 32] == pytest.approx(0.05)
    # ring covered only by the low object (0.1 < radius < 0.2 from center)
    assert top[32, 32 + 10] == 0
    assert depth[32, 32 + 10] == pytest.approx(0.02)
