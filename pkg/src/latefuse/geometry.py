"""Planar box geometry in the bird's-eye-view frame.

Boxes are rotated rectangles ``(x, y, w, d, theta)``. ``w`` is the extent
along the box's local x axis and ``d`` along its local y axis; ``theta``
rotates the local frame counter-clockwise about the vertical axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

EPSILON_AREA = 1e-9  # m^2; intersections below this are empty
TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    if -math.pi < theta <= math.pi:
        return float(theta)  # exact for in-range input
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped <= 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi


def angular_distance(a: float, b: float) -> float:
    """Shortest unsigned angle between two headings, in [0, pi]."""
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"angles must be finite, got {a!r}, {b!r}")
    diff = math.fmod(abs(a - b), TWO_PI)
    return min(diff, TWO_PI - diff)


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point components must be finite: ({self.x}, {self.y})")


@dataclass(frozen=True)
class BEVBox:
    x: float
    y: float
    w: float
    d: float
    theta: float

    def __post_init__(self):
        if not (self.w > 0.0 and self.d > 0.0):
            raise ValueError(f"box extents must be positive, got w={self.w}, d={self.d}")
        # frozen: normalise through object.__setattr__
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def center(self) -> Point2:
        return Point2(self.x, self.y)

    @property
    def area(self) -> float:
        return self.w * self.d

    def as_array(self) -> np.ndarray:
        """``[x, y, w, d, theta]``, the measurement ordering."""
        return np.array([self.x, self.y, self.w, self.d, self.theta])


class ConvexPolygon:
    """Counter-clockwise convex polygon.

    Construction reorders the vertices counter-clockwise and drops
    collinear or duplicate points.
    """

    __slots__ = ("vertices",)

    def __init__(self, vertices: Sequence[Point2] | np.ndarray):
        pts = np.asarray(
            [(p.x, p.y) if isinstance(p, Point2) else tuple(p) for p in vertices],
            dtype=float,
        )
        hull = _convex_hull(pts)
        if len(hull) < 3 or _signed_area(hull) <= 0.0:
            raise ValueError("a convex polygon needs at least 3 non-collinear vertices")
        self.vertices = hull

    def __len__(self) -> int:
        return len(self.vertices)

    def __repr__(self) -> str:
        return f"ConvexPolygon({self.vertices.tolist()})"

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    def points(self) -> list[Point2]:
        return [Point2(float(x), float(y)) for x, y in self.vertices]

    def contains(self, xy: np.ndarray) -> np.ndarray:
        """Vectorised inside test for an (n, 2) array of points."""
        xy = np.atleast_2d(xy)
        inside = np.ones(len(xy), dtype=bool)
        v = self.vertices
        for i in range(len(v)):
            a, b = v[i], v[(i + 1) % len(v)]
            cross = (b[0] - a[0]) * (xy[:, 1] - a[1]) - (b[1] - a[1]) * (xy[:, 0] - a[0])
            inside &= cross >= 0.0
        return inside


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    # Andrew's monotone chain; returns CCW hull without collinear points.
    uniq = sorted(set(map(tuple, pts.tolist())))
    if len(uniq) < 3:
        return np.asarray(uniq, dtype=float).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in uniq:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(uniq):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1], dtype=float)


def box_corners(b: BEVBox) -> ConvexPolygon:
    """Corners of ``b`` as a CCW polygon."""
    return ConvexPolygon(_corner_array(b))


def _corner_array(b: BEVBox) -> np.ndarray:
    hw, hd = 0.5 * b.w, 0.5 * b.d
    local = np.array([[-hw, -hd], [hw, -hd], [hw, hd], [-hw, hd]])
    c, s = math.cos(b.theta), math.sin(b.theta)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([b.x, b.y])


def _clip(subject: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Sutherland-Hodgman against the half-plane left of edge a->b.
    out = []
    n = len(subject)
    ex, ey = b[0] - a[0], b[1] - a[1]
    sides = ex * (subject[:, 1] - a[1]) - ey * (subject[:, 0] - a[0])
    for i in range(n):
        p, q = subject[i], subject[(i + 1) % n]
        sp, sq = sides[i], sides[(i + 1) % n]
        if sp >= 0.0:
            out.append(p)
        if (sp >= 0.0) != (sq >= 0.0):
            t = sp / (sp - sq)
            out.append(p + t * (q - p))
    return np.asarray(out, dtype=float).reshape(-1, 2)


def _intersection_vertices(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    poly = a
    for i in range(len(b)):
        if len(poly) == 0:
            break
        poly = _clip(poly, b[i], b[(i + 1) % len(b)])
    return poly


def polygon_intersection(a: ConvexPolygon, b: ConvexPolygon) -> ConvexPolygon | None:
    """Exact intersection of two convex polygons, ``None`` when empty."""
    verts = _intersection_vertices(a.vertices, b.vertices)
    if len(verts) < 3 or _signed_area(verts) <= EPSILON_AREA:
        return None
    try:
        poly = ConvexPolygon(verts)
    except ValueError:
        return None
    return poly if poly.area > EPSILON_AREA else None


def _intersection_area(ca: np.ndarray, cb: np.ndarray) -> float:
    verts = _intersection_vertices(ca, cb)
    if len(verts) < 3:
        return 0.0
    area = _signed_area(verts)
    return area if area > EPSILON_AREA else 0.0


def iou_bev(a: BEVBox, b: BEVBox, rotated: bool = True) -> float:
    """Rotated IoU of two BEV boxes.

    ``rotated=False`` compares the axis-aligned envelopes of both boxes
    instead, the convention some NMS implementations use.
    """
    if not rotated:
        return _iou_axis_aligned(a, b)
    # cheap rejection on circumscribed circles
    ra = 0.5 * math.hypot(a.w, a.d)
    rb = 0.5 * math.hypot(b.w, b.d)
    if math.hypot(a.x - b.x, a.y - b.y) >= ra + rb:
        return 0.0
    inter = _intersection_area(_corner_array(a), _corner_array(b))
    union = a.area + b.area - inter
    return min(1.0, max(0.0, inter / union))


def _envelope(b: BEVBox) -> tuple[float, float, float, float]:
    c = _corner_array(b)
    return c[:, 0].min(), c[:, 1].min(), c[:, 0].max(), c[:, 1].max()


def _iou_axis_aligned(a: BEVBox, b: BEVBox) -> float:
    ax0, ay0, ax1, ay1 = _envelope(a)
    bx0, by0, bx1, by1 = _envelope(b)
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def giou_bev(a: BEVBox, b: BEVBox) -> float:
    """Generalized IoU with the convex hull of both boxes as enclosing region."""
    ca, cb = _corner_array(a), _corner_array(b)
    inter = _intersection_area(ca, cb)
    union = a.area + b.area - inter
    iou = inter / union
    hull_area = _signed_area(_convex_hull(np.vstack([ca, cb])))
    if hull_area <= 0.0:
        return iou
    return iou - max(0.0, hull_area - union) / hull_area


def center_distance(a: BEVBox, b: BEVBox) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)
