"""Rigid poses, the 6D rotation encoding, and signed distance fields for pegs and holes.

Distances are in meters. The SDF kernels are numba-compiled scalar functions so the
physics integrator can call them per contact point; thin numpy wrappers expose them
to ordinary Python callers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

ORTHO_TOL = 1e-9


class Shape(str, enum.Enum):
    CIRCLE = "circle"
    SQUARE = "square"
    TRIANGLE = "triangle"
    HEXAGON = "hexagon"

    @property
    def code(self) -> int:
        return _SHAPE_CODES[self]


_SHAPE_CODES = {Shape.CIRCLE: 0, Shape.SQUARE: 1, Shape.TRIANGLE: 2, Shape.HEXAGON: 3}
_POLY_SIDES = {Shape.TRIANGLE: 3, Shape.HEXAGON: 6}


@dataclass(frozen=True)
class CrossSection:
    """2D section of a peg or hole.

    ``size`` is the radius for circles, the half side for squares and the
    circumradius for the regular polygons.
    """

    shape: Shape
    size: float

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        if not self.size > 0:
            raise ValueError(f"cross-section size must be > 0, got {self.size}")

    @property
    def extent(self) -> float:
        """Largest distance from the axis to the boundary."""
        if self.shape is Shape.SQUARE:
            return self.size * math.sqrt(2.0)
        return self.size

    def inflated(self, clearance: float) -> "CrossSection":
        """Section offset outward so every flat edge moves by ``clearance``."""
        if self.shape in _POLY_SIDES:
            n = _POLY_SIDES[self.shape]
            return CrossSection(self.shape, self.size + clearance / math.cos(math.pi / n))
        return CrossSection(self.shape, self.size + clearance)

    def perimeter_points(self, n: int) -> np.ndarray:
        """``n`` boundary points equally spaced by arc length, shape (n, 2)."""
        if self.shape is Shape.CIRCLE:
            ang = 2.0 * np.pi * np.arange(n) / n
            return self.size * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        verts = polygon_vertices(self.shape, self.size)
        edges = np.roll(verts, -1, axis=0) - verts
        lengths = np.linalg.norm(edges, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(lengths)])
        s = cum[-1] * np.arange(n) / n
        idx = np.searchsorted(cum, s, side="right") - 1
        frac = (s - cum[idx]) / lengths[idx]
        return verts[idx] + frac[:, None] * edges[idx]


def polygon_vertices(shape: Shape, size: float) -> np.ndarray:
    """Counter-clockwise vertices; squares are axis aligned."""
    shape = Shape(shape)
    if shape is Shape.SQUARE:
        h = size
        return np.array([[h, -h], [h, h], [-h, h], [-h, -h]], dtype=float)
    n = _POLY_SIDES[shape]
    # triangle points along +y, hexagon has a vertex on +x
    phase = 0.5 * np.pi if n == 3 else 0.0
    ang = phase + 2.0 * np.pi * np.arange(n) / n
    return size * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def equal_area_section(shape: Shape, reference_radius: float = 0.020) -> CrossSection:
    """Section of ``shape`` with the same area as a circle of ``reference_radius``."""
    shape = Shape(shape)
    area = math.pi * reference_radius**2
    if shape is Shape.CIRCLE:
        return CrossSection(shape, reference_radius)
    if shape is Shape.SQUARE:
        return CrossSection(shape, 0.5 * math.sqrt(area))
    n = _POLY_SIDES[shape]
    # regular n-gon area = n/2 R^2 sin(2 pi / n)
    return CrossSection(shape, math.sqrt(2.0 * area / (n * math.sin(2.0 * math.pi / n))))


@dataclass(frozen=True)
class HoleGeometry:
    """Plate occupying z <= top_z with a prismatic hole of ``depth`` along world z."""

    section: CrossSection
    top_z: float = 0.0
    depth: float = 0.030
    plate_extent: float = 0.2

    def __post_init__(self):
        if not self.depth > 0:
            raise ValueError("hole depth must be > 0")
        if not self.plate_extent > 4.0 * self.section.extent:
            raise ValueError("plate_extent must exceed 4x the hole cross-section extent")


@dataclass(frozen=True)
class PegGeometry:
    """Peg in its own frame: origin at the grasp point, tip center at (0, 0, -length)."""

    section: CrossSection
    length: float
    sample_points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.asarray(self.sample_points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
            raise ValueError("sample_points must be a non-empty (n, 3) array")
        r = np.hypot(pts[:, 0], pts[:, 1])
        if np.any(r > self.section.extent + 1e-12) or np.any(pts[:, 2] < -self.length - 1e-12) or np.any(pts[:, 2] > 1e-12):
            raise ValueError("sample points must lie inside the peg's bounding cylinder")
        pts.setflags(write=False)
        object.__setattr__(self, "sample_points", pts)


def make_peg(section: CrossSection, length: float = 0.05, n_rim: int = 16,
             ring_heights: tuple[float, ...] = (0.005,)) -> PegGeometry:
    """Tip center, ``n_rim`` tip-rim points, and one lateral ring per entry of ``ring_heights``."""
    rim = section.perimeter_points(n_rim)
    pts = [np.array([[0.0, 0.0, -length]])]
    pts.append(np.column_stack([rim, np.full(n_rim, -length)]))
    for h in ring_heights:
        pts.append(np.column_stack([rim, np.full(n_rim, -length + h)]))
    return PegGeometry(section, length, np.concatenate(pts))


# ---------------------------------------------------------------- poses / rotations

def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def is_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return bool(np.max(np.abs(R @ R.T - np.eye(3))) <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


@dataclass(frozen=True)
class Pose:
    """World-from-body rigid transform."""

    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        if not is_rotation(R):
            raise ValueError("rotation must be orthonormal with det +1")
        p.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "rotation", R)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.eye(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.position

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.apply(other.position), self.rotation @ other.rotation)


def rotation_to_6d(R: np.ndarray) -> np.ndarray:
    """First two columns of R stacked: (R00, R10, R20, R01, R11, R21)."""
    R = np.asarray(R, dtype=float)
    return np.concatenate([R[:, 0], R[:, 1]])


def rotation_from_6d(r6: np.ndarray) -> np.ndarray:
    """Gram-Schmidt reconstruction; exact inverse of :func:`rotation_to_6d` on rotations."""
    r6 = np.asarray(r6, dtype=float)
    a = r6[:3] / np.linalg.norm(r6[:3])
    b = r6[3:] - np.dot(a, r6[3:]) * a
    b = b / np.linalg.norm(b)
    return np.column_stack([a, b, np.cross(a, b)])


def peg_tip(pose: Pose, peg: PegGeometry) -> np.ndarray:
    """World position of the peg's tip center."""
    return pose.position + pose.rotation @ np.array([0.0, 0.0, -peg.length])


# ---------------------------------------------------------------- SDF kernels

@njit(cache=True)
def _segment_sdf_poly(px, py, vx, vy, n):
    """Unsigned distance to the closed polygon with winding sign (negative inside)."""
    best = 1e300
    bx = 0.0
    by = 0.0
    inside = False
    for i in range(n):
        j = (i + 1) % n
        ax, ay = vx[i], vy[i]
        ex, ey = vx[j] - ax, vy[j] - ay
        wx, wy = px - ax, py - ay
        t = (wx * ex + wy * ey) / (ex * ex + ey * ey)
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        qx, qy = wx - ex * t, wy - ey * t
        d2 = qx * qx + qy * qy
        if d2 < best:
            best = d2
            bx, by = qx, qy
        # crossing-number test
        if (ay > py) != (vy[j] > py):
            xc = ax + (py - ay) * ex / ey
            if px < xc:
                inside = not inside
    d = math.sqrt(best)
    if d > 0.0:
        gx, gy = bx / d, by / d
    else:
        gx, gy = 0.0, 0.0
    if inside:
        return -d, -gx, -gy
    return d, gx, gy


@njit(cache=True)
def sdf2d(shape_code, size, x, y):
    """2D signed distance and gradient of a cross-section centered at the origin."""
    if shape_code == 0:
        r = math.sqrt(x * x + y * y)
        if r > 0.0:
            return r - size, x / r, y / r
        return -size, 0.0, 0.0
    if shape_code == 1:
        qx = abs(x) - size
        qy = abs(y) - size
        sx = 1.0 if x >= 0.0 else -1.0
        sy = 1.0 if y >= 0.0 else -1.0
        if qx > 0.0 or qy > 0.0:
            mx = qx if qx > 0.0 else 0.0
            my = qy if qy > 0.0 else 0.0
            d = math.sqrt(mx * mx + my * my)
            return d, sx * mx / d, sy * my / d
        if qx > qy:
            return qx, sx, 0.0
        return qy, 0.0, sy
    n = 3 if shape_code == 2 else 6
    phase = 0.5 * math.pi if n == 3 else 0.0
    vx = np.empty(n)
    vy = np.empty(n)
    for i in range(n):
        a = phase + 2.0 * math.pi * i / n
        vx[i] = size * math.cos(a)
        vy[i] = size * math.sin(a)
    return _segment_sdf_poly(x, y, vx, vy, n)


@njit(cache=True)
def sdf_plate_kernel(x, y, z, shape_code, size, top_z, depth):
    """Plate-with-hole SDF: max(z - top_z, -prism) with the prism open upward.

    Returns (phi, gx, gy, gz). Positive phi is free space.
    """
    d2, g2x, g2y = sdf2d(shape_code, size, x, y)
    wy = (top_z - depth) - z
    # prism SDF and gradient
    if d2 > 0.0 or wy > 0.0:
        mx = d2 if d2 > 0.0 else 0.0
        my = wy if wy > 0.0 else 0.0
        pr = math.sqrt(mx * mx + my * my)
        pgx = mx * g2x / pr
        pgy = mx * g2y / pr
        pgz = -my / pr
    elif d2 > wy:
        pr = d2
        pgx, pgy, pgz = g2x, g2y, 0.0
    else:
        pr = wy
        pgx, pgy, pgz = 0.0, 0.0, -1.0
    hs = z - top_z
    if hs >= -pr:
        return hs, 0.0, 0.0, 1.0
    if pgx == 0.0 and pgy == 0.0 and pgz == 0.0:
        return -pr, 0.0, 0.0, 1.0
    if x * x + y * y < 1e-24 and pgz == 0.0:
        # radial direction undefined on the axis
        return -pr, 0.0, 0.0, 1.0
    return -pr, -pgx, -pgy, -pgz


def sdf_plate_with_hole(p, hole: HoleGeometry) -> tuple[float, np.ndarray]:
    """Signed distance (m) and unit gradient of the plate for a point in the hole frame."""
    x, y, z = (float(v) for v in p)
    phi, gx, gy, gz = sdf_plate_kernel(x, y, z, hole.section.shape.code, hole.section.size,
                                       hole.top_z, hole.depth)
    return float(phi), np.array([gx, gy, gz])


def sdf_section(p2, section: CrossSection) -> tuple[float, np.ndarray]:
    d, gx, gy = sdf2d(section.shape.code, section.size, float(p2[0]), float(p2[1]))
    return float(d), np.array([gx, gy])
