"""Oriented 3D boxes: canonical box points, frame changes, containment, IoU.

Object frame convention: x along the box width, y along the length (the
front), z up.  Heading is the rotation about z that takes the object frame
to the world frame.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

# Sign triples of the eight corners, binary order (-,-,-), (-,-,+), ..., (+,+,+).
CORNER_SIGNS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))


def normalize_angle(theta: float) -> float:
    """Map an angle into (-pi, pi]."""
    two_pi = 2.0 * math.pi
    out = theta - two_pi * math.ceil((theta - math.pi) / two_pi)
    if out <= -math.pi:
        out += two_pi
    return out


@dataclass(frozen=True)
class Box7:
    x: float
    y: float
    z: float
    w: float
    l: float  # noqa: E741
    h: float
    heading: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "w", "l", "h", "heading"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got ({self.w}, {self.l}, {self.h})")
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    @classmethod
    def from_array(cls, values) -> "Box7":
        return cls(*[float(v) for v in values])

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w, self.l, self.h, self.heading])

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def size(self) -> np.ndarray:
        return np.array([self.w, self.l, self.h])

    @property
    def volume(self) -> float:
        return self.w * self.l * self.h

    def with_pose(self, center, heading: float) -> "Box7":
        return Box7(center[0], center[1], center[2], self.w, self.l, self.h, heading)


def rotation_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def local_box_points(size) -> np.ndarray:
    """The nine box points of an axis-aligned box centered at the origin."""
    half = 0.5 * np.asarray(size, dtype=np.float64)
    return np.vstack([CORNER_SIGNS * half, np.zeros(3)])


def box_points(b: Box7) -> np.ndarray:
    """Eight corners in canonical order followed by the center, ``[9, 3]``."""
    pts = local_box_points(b.size) @ rotation_z(b.heading).T + b.center
    pts[8] = b.center
    return pts


def to_object_frame(points, b: Box7) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return (pts - b.center) @ rotation_z(b.heading)


def from_object_frame(points, b: Box7) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return pts @ rotation_z(b.heading).T + b.center


def box_to_frame(box: Box7, ref: Box7) -> Box7:
    """Express ``box`` in the object frame of ``ref``."""
    c = to_object_frame(box.center, ref)[0]
    return box.with_pose(c, box.heading - ref.heading)


def box_from_frame(box: Box7, ref: Box7) -> Box7:
    """Inverse of :func:`box_to_frame`."""
    c = from_object_frame(box.center, ref)[0]
    return box.with_pose(c, box.heading + ref.heading)


def points_in_box(points, b: Box7) -> np.ndarray:
    """Boolean mask of points inside ``b``, faces included."""
    local = np.abs(to_object_frame(points, b))
    half = 0.5 * b.size
    return np.all(local <= half, axis=1)


def contains(b: Box7, p) -> bool:
    return bool(points_in_box(np.asarray(p, dtype=np.float64).reshape(1, 3), b)[0])


def enlarge(b: Box7, margin: float) -> Box7:
    if margin < 0:
        raise ValueError(f"enlarge margin must be non-negative, got {margin}")
    return Box7(b.x, b.y, b.z, b.w + 2 * margin, b.l + 2 * margin, b.h + 2 * margin, b.heading)


def center_distance(a: Box7, b: Box7) -> float:
    return float(np.linalg.norm(a.center - b.center))


def bev_corners(b: Box7) -> np.ndarray:
    """Counter-clockwise footprint rectangle, ``[4, 2]``."""
    hw, hl = 0.5 * b.w, 0.5 * b.l
    local = np.array([[-hw, -hl], [hw, -hl], [hw, hl], [-hw, hl]])
    c, s = math.cos(b.heading), math.sin(b.heading)
    return local @ np.array([[c, s], [-s, c]]) + np.array([b.x, b.y])


def clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW ``clipper``."""
    output = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not output:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, output = output, []
        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    output.append(_cross_point(prev, cur, s_prev, s_cur))
                output.append(cur)
            elif s_prev >= 0:
                output.append(_cross_point(prev, cur, s_prev, s_cur))
            prev, s_prev = cur, s_cur
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def iou_3d(a: Box7, b: Box7) -> float:
    """Exact IoU of two upright oriented boxes."""
    z_overlap = min(a.z + 0.5 * a.h, b.z + 0.5 * b.h) - max(a.z - 0.5 * a.h, b.z - 0.5 * b.h)
    if z_overlap <= 0:
        return 0.0
    area = polygon_area(clip_polygon(bev_corners(a), bev_corners(b)))
    inter = area * z_overlap
    if inter <= 0:
        return 0.0
    union = a.volume + b.volume - inter
    return float(min(max(inter / union, 0.0), 1.0))
