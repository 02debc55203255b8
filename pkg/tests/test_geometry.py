import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softwrist.geometry import (
    CrossSection,
    HoleGeometry,
    Pose,
    Shape,
    axis_angle,
    equal_area_section,
    make_peg,
    peg_tip,
    polygon_vertices,
    rot_x,
    rot_z,
    rotation_from_6d,
    rotation_to_6d,
    sdf_plate_with_hole,
    sdf_section,
)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


class TestRotation6D:
    def test_identity(self):
        assert np.array_equal(rotation_to_6d(np.eye(3)), [1, 0, 0, 0, 1, 0])

    def test_rz_90(self):
        np.testing.assert_allclose(rotation_to_6d(rot_z(math.pi / 2)), [0, 1, 0, -1, 0, 0], atol=1e-15)

    def test_rx_5deg(self):
        r6 = rotation_to_6d(rot_x(math.radians(5)))
        np.testing.assert_allclose(r6, [1, 0, 0, 0, math.cos(math.radians(5)), math.sin(math.radians(5))], atol=1e-15)
        np.testing.assert_allclose(r6[4:], [0.99619, 0.08716], atol=1e-5)

    def test_roundtrip_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            R = random_rotation(rng)
            r6 = rotation_to_6d(R)
            assert abs(np.linalg.norm(r6[:3]) - 1) < 1e-9
            assert abs(np.dot(r6[:3], r6[3:])) < 1e-9
            np.testing.assert_allclose(rotation_from_6d(r6), R, atol=1e-9)


class TestPose:
    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            Pose(np.zeros(3), np.diag([1.0, 1.0, -1.0]))

    def test_compose_and_apply(self):
        a = Pose([1.0, 0, 0], rot_z(math.pi / 2))
        b = Pose([0, 1.0, 0], np.eye(3))
        np.testing.assert_allclose(a.compose(b).position, [0.0, 0, 0], atol=1e-15)


class TestPegTip:
    peg = make_peg(CrossSection(Shape.CIRCLE, 0.02), length=0.1)

    def test_identity(self):
        np.testing.assert_allclose(peg_tip(Pose.identity(), self.peg), [0, 0, -0.1])

    def test_tilted(self):
        a = math.radians(5)
        tip = peg_tip(Pose([0, 0, 0.2], rot_x(a)), self.peg)
        np.testing.assert_allclose(tip, [0, 0.1 * math.sin(a), 0.2 - 0.1 * math.cos(a)], atol=1e-15)
        np.testing.assert_allclose(tip, [0, 0.008716, 0.10038], atol=1e-5)

    def test_translation(self):
        np.testing.assert_allclose(peg_tip(Pose([0.01, 0.02, 0.3], np.eye(3)), self.peg), [0.01, 0.02, 0.2])


class TestPegGeometry:
    def test_sample_layout(self):
        peg = make_peg(CrossSection(Shape.CIRCLE, 0.02), length=0.05)
        pts = peg.sample_points
        assert pts.shape == (33, 3)
        np.testing.assert_allclose(pts[0], [0, 0, -0.05])
        np.testing.assert_allclose(np.hypot(pts[1:, 0], pts[1:, 1]), 0.02)
        assert np.allclose(pts[1:17, 2], -0.05) and np.allclose(pts[17:, 2], -0.045)

    @pytest.mark.parametrize("shape", list(Shape))
    def test_rim_points_on_boundary(self, shape):
        sec = equal_area_section(shape)
        for p in sec.perimeter_points(16):
            assert abs(sdf_section(p, sec)[0]) < 1e-12

    def test_rejects_points_outside(self):
        from softwrist.geometry import PegGeometry

        with pytest.raises(ValueError):
            PegGeometry(CrossSection(Shape.CIRCLE, 0.02), 0.05, np.array([[0.03, 0, -0.01]]))

    def test_equal_area(self):
        for shape in Shape:
            sec = equal_area_section(shape)
            if shape is Shape.CIRCLE:
                area = math.pi * sec.size**2
            else:
                v = polygon_vertices(shape, sec.size)
                x, y = v[:, 0], v[:, 1]
                area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
            assert area == pytest.approx(math.pi * 0.02**2, rel=1e-12)


def brute_force_sdf2d(p, section, n=20000):
    """Oracle: distance to a dense boundary sampling, sign from the polygon/circle test."""
    boundary = section.perimeter_points(n)
    d = np.min(np.linalg.norm(boundary - p, axis=1))
    if section.shape is Shape.CIRCLE:
        inside = np.hypot(*p) < section.size
    else:
        from matplotlib.path import Path

        inside = Path(polygon_vertices(section.shape, section.size)).contains_point(p)
    return -d if inside else d


@pytest.mark.parametrize("shape", list(Shape))
def test_sdf2d_matches_brute_force(shape):
    sec = equal_area_section(shape)
    rng = np.random.default_rng(1)
    for p in rng.uniform(-0.05, 0.05, size=(40, 2)):
        d, g = sdf_section(p, sec)
        assert d == pytest.approx(brute_force_sdf2d(p, sec), abs=2e-5)
        assert np.linalg.norm(g) == pytest.approx(1.0, abs=1e-12)
        # gradient matches finite differences away from the medial axis
        eps = 1e-7
        fd = np.array([
            (sdf_section(p + [eps, 0], sec)[0] - sdf_section(p - [eps, 0], sec)[0]) / (2 * eps),
            (sdf_section(p + [0, eps], sec)[0] - sdf_section(p - [0, eps], sec)[0]) / (2 * eps),
        ])
        if abs(np.linalg.norm(fd) - 1) < 1e-4:
            np.testing.assert_allclose(g, fd, atol=1e-4)


class TestPlateSdf:
    hole = HoleGeometry(CrossSection(Shape.CIRCLE, 0.021), top_z=0.0, depth=0.05)

    def test_above_plate(self):
        phi, g = sdf_plate_with_hole([0.05, 0, 0.05], self.hole)
        assert phi == pytest.approx(0.05, abs=1e-15)
        np.testing.assert_array_equal(g, [0, 0, 1])

    def test_hole_axis(self):
        phi, g = sdf_plate_with_hole([0, 0, -0.01], self.hole)
        assert phi == pytest.approx(0.021, abs=1e-15)
        np.testing.assert_array_equal(g, [0, 0, 1])

    def test_inside_material(self):
        phi, g = sdf_plate_with_hole([0.05, 0, -0.005], self.hole)
        assert phi == pytest.approx(-0.005, abs=1e-15)
        np.testing.assert_array_equal(g, [0, 0, 1])

    def test_inside_void_points_to_axis(self):
        phi, g = sdf_plate_with_hole([0.015, 0, -0.01], self.hole)
        assert phi == pytest.approx(0.006, abs=1e-15)
        np.testing.assert_allclose(g, [-1, 0, 0])

    def test_hole_bottom_is_solid(self):
        phi, g = sdf_plate_with_hole([0.0, 0.0, -0.052], self.hole)
        assert phi == pytest.approx(-0.002, abs=1e-15)
        np.testing.assert_allclose(g, [0, 0, 1])
        phi, g = sdf_plate_with_hole([0.0, 0.0, -0.045], self.hole)
        assert phi == pytest.approx(0.005, abs=1e-15)

    def test_rejects_bad_hole(self):
        with pytest.raises(ValueError):
            HoleGeometry(CrossSection(Shape.CIRCLE, 0.021), depth=0.0)
        with pytest.raises(ValueError):
            HoleGeometry(CrossSection(Shape.CIRCLE, 0.021), plate_extent=0.05)


hole_shapes = st.sampled_from([HoleGeometry(equal_area_section(s).inflated(0.001), depth=0.03) for s in Shape])
coord = st.floats(-0.06, 0.06)


@settings(max_examples=300, deadline=None)
@given(hole_shapes, coord, coord, coord, st.floats(0, 2 * math.pi), st.floats(0, math.pi))
def test_sdf_is_1_lipschitz(hole, x, y, z, az, el):
    a = np.array([x, y, z])
    b = a + 0.001 * np.array([math.sin(el) * math.cos(az), math.sin(el) * math.sin(az), math.cos(el)])
    fa, ga = sdf_plate_with_hole(a, hole)
    fb, _ = sdf_plate_with_hole(b, hole)
    assert abs(fa - fb) <= np.linalg.norm(a - b) + 1e-12
    assert np.linalg.norm(ga) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(hole_shapes, st.floats(0.04, 0.09), st.floats(0, 2 * math.pi), st.floats(1e-4, 0.01))
def test_projection_reaches_surface(hole, r, az, h):
    p = np.array([r * math.cos(az), r * math.sin(az), h])
    phi, g = sdf_plate_with_hole(p, hole)
    assert phi > 0
    phi2, _ = sdf_plate_with_hole(p - phi * g, hole)
    assert abs(phi2) < 1e-6


def test_axis_angle_matches_rot_x():
    np.testing.assert_allclose(axis_angle([2.0, 0, 0], 0.3), rot_x(0.3), atol=1e-15)
