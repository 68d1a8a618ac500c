"""Wall-with-hole world geometry: region labels, exact cuboid collision,
gap-edge point sampling and field-of-view visibility.

The wall is a finite slab (10 m x 10 m laterally, configurable thickness)
with a single convex hole. Collision of the cuboid collider is decided
exactly: the cuboid is clipped by the two slab planes and, because both the
clipped polytope and the hole cross-section are convex, the collider is
free of the wall material iff every clipped vertex projects inside the
hole.
"""

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .dynamics import VehicleState

WALL_HALF_EXTENT = 5.0  # lateral half-size of the solid wall, m
DEFAULT_THICKNESS = 0.10

POLYGON_SHAPES = ("rectangle", "rhombus", "triangle", "parallelogram")
SHAPES = POLYGON_SHAPES + ("ellipse",)


class GapSpecError(ValueError):
    """Invalid hole geometry (non-convex, wrong orientation, zero area)."""


class Region(enum.IntEnum):
    F0 = 0  # start side, no slab overlap
    FG_INTERSECTING = 1  # overlapping the slab volume, collision-free
    F1 = 2  # far side, no slab overlap
    COLLISION = 3


@dataclass
class RegionLabel:
    region: Region
    x_gap: float  # signed collider-center coordinate along the gap normal


@dataclass
class Collider:
    """Cuboid proxy geometry; half sizes in the body frame, meters."""

    half_extents: np.ndarray = field(default_factory=lambda: np.array([0.15, 0.15, 0.05]))

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64)
        if not np.all(self.half_extents > 0):
            raise ValueError("collider half extents must be positive")

    @property
    def corners_body(self):
        """(8, 3) corner offsets; index bits select the sign per axis."""
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=np.float64,
        )
        return signs * self.half_extents

    @property
    def circumradius(self):
        return float(np.linalg.norm(self.half_extents))


# cuboid edges as corner-index pairs (indices into corners_body order)
_EDGE_PAIRS = np.array(
    [
        [0, 4], [1, 5], [2, 6], [3, 7],  # x axis
        [0, 2], [1, 3], [4, 6], [5, 7],  # y axis
        [0, 1], [2, 3], [4, 5], [6, 7],  # z axis
    ]
)


def _validate_polygon(verts):
    verts = np.asarray(verts, dtype=np.float64)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
        raise GapSpecError("polygon boundary needs >= 3 2D vertices")
    nxt = np.roll(verts, -1, axis=0)
    edges = nxt - verts
    cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
    area2 = np.sum(verts[:, 0] * nxt[:, 1] - nxt[:, 0] * verts[:, 1])
    if area2 <= 1e-12:
        raise GapSpecError("polygon must be counterclockwise with positive area")
    if np.any(cross < -1e-12):
        raise GapSpecError("polygon must be convex")
    return verts


def _polygon_planes(verts):
    """Inward half-plane normals m and offsets b: inside iff m.q - b >= 0."""
    nxt = np.roll(verts, -1, axis=0)
    d = nxt - verts
    lengths = np.linalg.norm(d, axis=1)
    m = np.stack([-d[:, 1], d[:, 0]], axis=1) / lengths[:, None]
    b = np.sum(m * verts, axis=1)
    return m, b


class GapSpec:
    """Convex hole in a wall slab.

    shape: one of rectangle/rhombus/triangle/parallelogram/ellipse.
    boundary: (K, 2) CCW convex vertices in gap-plane meters, or (a, b)
    semi-axes for the ellipse. roll rotates the hole about the normal.
    """

    def __init__(self, shape, boundary, center=(0.0, 0.0, 0.0), normal=(1.0, 0.0, 0.0),
                 roll=0.0, thickness=DEFAULT_THICKNESS):
        if shape not in SHAPES:
            raise GapSpecError(f"unknown gap shape {shape!r}")
        self.shape = shape
        if shape == "ellipse":
            a, b = float(boundary[0]), float(boundary[1])
            if not (a >= b > 0):
                raise GapSpecError("ellipse needs a >= b > 0")
            self.semi_axes = (a, b)
            self.boundary = None
        else:
            self.boundary = _validate_polygon(boundary)
            self.semi_axes = None
        self.center = np.asarray(center, dtype=np.float64)
        normal = np.asarray(normal, dtype=np.float64)
        nn = np.linalg.norm(normal)
        if nn < 1e-9:
            raise GapSpecError("gap normal must be nonzero")
        self.normal = normal / nn
        self.roll = float(roll)
        if thickness <= 0:
            raise GapSpecError("thickness must be positive")
        self.thickness = float(thickness)
        self._axes = None

    def axes(self):
        """Rolled in-plane world axes (u1, u2) with u1 x u2 = normal."""
        if self._axes is None:
            n = self.normal
            ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
            e1 = np.cross(ref, n)
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(n, e1)
            c, s = math.cos(self.roll), math.sin(self.roll)
            self._axes = (c * e1 + s * e2, -s * e1 + c * e2)
        return self._axes

    @property
    def circumradius(self):
        if self.shape == "ellipse":
            return self.semi_axes[0]
        return float(np.max(np.linalg.norm(self.boundary, axis=1)))

    def to_world(self, pts2d):
        """Map gap-plane coordinates to world points on the mid plane."""
        u1, u2 = self.axes()
        pts2d = np.asarray(pts2d, dtype=np.float64)
        return self.center + pts2d[..., :1] * u1 + pts2d[..., 1:] * u2

    def local_boundary_points(self, n):
        return _boundary_points_local(self._boundary_key(), n)

    def _boundary_key(self):
        if self.shape == "ellipse":
            return ("ellipse", self.semi_axes)
        return (self.shape, tuple(map(tuple, self.boundary)))

    def transformed(self, R=None, t=None):
        """Gap after a rigid world transform p -> R p + t."""
        R = np.eye(3) if R is None else np.asarray(R, dtype=np.float64)
        t = np.zeros(3) if t is None else np.asarray(t, dtype=np.float64)
        out = GapSpec(self.shape,
                      self.semi_axes if self.shape == "ellipse" else self.boundary,
                      R @ self.center + t, R @ self.normal, self.roll, self.thickness)
        # carry the rotated frame so in-plane axes follow the transform exactly
        u1, u2 = self.axes()
        out._axes = (R @ u1, R @ u2)
        return out


@lru_cache(maxsize=64)
def _boundary_points_local(key, n):
    """n equal-arc-length boundary points in gap-plane coordinates."""
    shape, data = key
    if n < 3:
        raise ValueError("need at least 3 boundary points")
    if shape == "ellipse":
        a, b = data

        def speed(t):
            return math.hypot(a * math.sin(t), b * math.cos(t))

        total = quad(speed, 0.0, 2.0 * math.pi, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
        pts = np.empty((n, 2))
        theta = 0.0
        for i in range(n):
            target = total * i / n
            if i == 0:
                theta = 0.0
            else:
                f = lambda t: quad(speed, 0.0, t, epsabs=1e-12, epsrel=1e-12, limit=200)[0] - target
                lo = theta
                hi = min(2.0 * math.pi, lo + 2.0 * math.pi / n * 4 + 1e-6)
                while f(hi) < 0:
                    hi = min(2.0 * math.pi, hi + 2.0 * math.pi / n)
                theta = brentq(f, lo, hi, xtol=1e-13, rtol=8.9e-16)
            pts[i] = (a * math.cos(theta), b * math.sin(theta))
        return pts
    verts = np.asarray(data, dtype=np.float64)
    nxt = np.roll(verts, -1, axis=0)
    seg_len = np.linalg.norm(nxt - verts, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    s = total * np.arange(n) / n
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(verts) - 1)
    frac = (s - cum[idx]) / seg_len[idx]
    return verts[idx] + frac[:, None] * (nxt[idx] - verts[idx])


def sample_gap_points(gap: GapSpec, n: int):
    """n world points at equal arc length along the hole edge, CCW from the
    first vertex (ellipse: from angle 0), on the wall mid-thickness plane."""
    return gap.to_world(gap.local_boundary_points(n))


def gap_axis_coord(p, gap: GapSpec) -> float:
    """Signed coordinate along the gap normal, origin at mid-thickness."""
    return float(np.dot(np.asarray(p, dtype=np.float64) - gap.center, gap.normal))


class GapBatch:
    """Struct-of-arrays view of N gaps for vectorized collision queries.

    Polygon half-planes are padded to a common edge count; ellipses are
    handled through a mask. Rows may be rewritten in place on env resets.
    """

    def __init__(self, gaps, max_edges=None):
        n = len(gaps)
        self.n = n
        edges = max((len(g.boundary) if g.boundary is not None else 0) for g in gaps)
        self.max_edges = max(max_edges or 0, edges, 1)
        self.center = np.zeros((n, 3))
        self.normal = np.zeros((n, 3))
        self.u1 = np.zeros((n, 3))
        self.u2 = np.zeros((n, 3))
        self.half_thickness = np.zeros(n)
        self.is_ellipse = np.zeros(n, dtype=bool)
        self.ab = np.ones((n, 2))
        self.poly_m = np.zeros((n, self.max_edges, 2))
        self.poly_b = np.zeros((n, self.max_edges))
        for i, g in enumerate(gaps):
            self.set_row(i, g)

    def set_row(self, i, gap: GapSpec):
        u1, u2 = gap.axes()
        if gap.shape == "ellipse":
            self.set_row_arrays(i, gap.center, gap.normal, u1, u2, gap.thickness / 2.0,
                                True, gap.semi_axes, None, None)
        else:
            m, b = _polygon_planes(gap.boundary)
            self.set_row_arrays(i, gap.center, gap.normal, u1, u2, gap.thickness / 2.0,
                                False, None, m, b)

    def set_row_arrays(self, i, center, normal, u1, u2, half_thickness,
                       is_ellipse, ab, poly_m, poly_b):
        """Raw row write used by the env reset hot path (no GapSpec built)."""
        self.center[i] = center
        self.normal[i] = normal
        self.u1[i] = u1
        self.u2[i] = u2
        self.half_thickness[i] = half_thickness
        self.is_ellipse[i] = is_ellipse
        if is_ellipse:
            self.ab[i] = ab
            self.poly_m[i] = 0.0
            self.poly_b[i] = -1.0  # 0 >= -1: padding constraints always pass
        else:
            e = len(poly_m)
            if e > self.max_edges:
                raise ValueError("gap has more edges than the batch was built for")
            self.ab[i] = 1.0
            self.poly_m[i, :e] = poly_m
            self.poly_b[i, :e] = poly_b
            self.poly_m[i, e:] = poly_m[0]
            self.poly_b[i, e:] = poly_b[0]

    def contains_2d(self, q, rows=None):
        """Inside-hole test for gap-plane points q (N, M, 2) -> (N, M) bool.

        rows restricts the per-gap data to a subset matching q's leading dim.
        """
        poly_m = self.poly_m if rows is None else self.poly_m[rows]
        poly_b = self.poly_b if rows is None else self.poly_b[rows]
        ab = self.ab if rows is None else self.ab[rows]
        is_ell = self.is_ellipse if rows is None else self.is_ellipse[rows]
        dots = np.matmul(q, poly_m.transpose(0, 2, 1)) - poly_b[:, None, :]
        inside_poly = np.all(dots >= 0.0, axis=2)
        s = (q[..., 0] / ab[:, None, 0]) ** 2 + (q[..., 1] / ab[:, None, 1]) ** 2
        inside_ell = s <= 1.0
        return np.where(is_ell[:, None], inside_ell, inside_poly)

    def plane_coords(self, pts, rows=None):
        """World points (N, M, 3) -> in-plane (N, M, 2) and normal coord (N, M)."""
        center = self.center if rows is None else self.center[rows]
        u1 = self.u1 if rows is None else self.u1[rows]
        u2 = self.u2 if rows is None else self.u2[rows]
        normal = self.normal if rows is None else self.normal[rows]
        rel = pts - center[:, None, :]
        qx = np.einsum("nkj,nj->nk", rel, u1)
        qy = np.einsum("nkj,nj->nk", rel, u2)
        x = np.einsum("nkj,nj->nk", rel, normal)
        return np.stack([qx, qy], axis=-1), x


def _clipped_candidates(corners, x, h):
    """Vertices of (cuboid ∩ slab): points (N, 32, 3), validity (N, 32).

    corners (N, 8, 3) world, x (N, 8) their gap-axis coords, h (N,) half
    thickness. Candidates are corners inside the slab plus cuboid-edge
    crossings with either slab plane.
    """
    h = h[:, None]
    inside = np.abs(x) <= h
    ei, ej = _EDGE_PAIRS[:, 0], _EDGE_PAIRS[:, 1]
    xa, xb = x[:, ei], x[:, ej]
    A = corners[:, ei, :]
    seg = corners[:, ej, :] - A
    pts_list = [corners]
    valid_list = [inside]
    for c in (-1.0, 1.0):
        plane = c * h  # (N, 1) broadcast over the 12 edges
        fa, fb = xa - plane, xb - plane
        crossing = (fa * fb) < 0.0
        denom = xb - xa
        t = np.where(crossing, fa / np.where(np.abs(denom) < 1e-300, 1.0, -denom), 0.0)
        pts_list.append(A + t[..., None] * seg)
        valid_list.append(crossing)
    return np.concatenate(pts_list, axis=1), np.concatenate(valid_list, axis=1)


def collision_batch(p, R, gaps: GapBatch, collider: Collider):
    """Exact cuboid-vs-wall test for N poses -> bool (N,)."""
    return collision_and_corners(p, R, gaps, collider)[0]


def collision_and_corners(p, R, gaps: GapBatch, collider: Collider):
    """Collision flags (N,) plus corner gap-axis coordinates (N, 8).

    Shares the corner transform with region classification and skips the
    clip/containment math for colliders that do not straddle the slab,
    which is the common case while stepping many environments.
    """
    corners = np.einsum("nij,kj->nki", R, collider.corners_body) + p[:, None, :]
    return collision_from_corners(corners, gaps)


def collision_from_corners(corners, gaps: GapBatch):
    """Exact wall test given world-frame cuboid corners (N, 8, 3)."""
    x_corners = np.einsum("nkj,nj->nk", corners - gaps.center[:, None, :], gaps.normal)
    h = gaps.half_thickness
    overlap = ~(np.all(x_corners < -h[:, None], axis=1) | np.all(x_corners > h[:, None], axis=1))
    col = np.zeros(gaps.n, dtype=bool)
    rows = np.flatnonzero(overlap)
    if rows.size:
        pts, valid = _clipped_candidates(corners[rows], x_corners[rows], h[rows])
        q, _ = gaps.plane_coords(pts, rows=rows)
        inside_hole = gaps.contains_2d(q, rows=rows)
        within_wall = (np.abs(q[..., 0]) <= WALL_HALF_EXTENT) & (np.abs(q[..., 1]) <= WALL_HALF_EXTENT)
        col[rows] = np.any(valid & within_wall & ~inside_hole, axis=1)
    return col, x_corners


def corner_axis_coords(p, R, gaps: GapBatch, collider: Collider):
    """Gap-normal coordinates of the 8 collider corners, (N, 8)."""
    corners = np.einsum("nij,kj->nki", R, collider.corners_body) + p[:, None, :]
    return np.einsum("nkj,nj->nk", corners - gaps.center[:, None, :], gaps.normal)


def classify_batch(p, R, gaps: GapBatch, collider: Collider):
    """Region labels (N,) int and center gap-axis coordinates (N,)."""
    x_corners = corner_axis_coords(p, R, gaps, collider)
    h = gaps.half_thickness[:, None]
    f0 = np.all(x_corners < -h, axis=1)
    f1 = np.all(x_corners > h, axis=1)
    col = collision_batch(p, R, gaps, collider)
    labels = np.full(gaps.n, Region.FG_INTERSECTING, dtype=np.int64)
    labels[f0] = Region.F0
    labels[f1] = Region.F1
    labels[col] = Region.COLLISION
    x_center = np.einsum("nj,nj->n", p - gaps.center, gaps.normal)
    return labels, x_center


def check_collision(state: VehicleState, collider: Collider, gap: GapSpec) -> bool:
    return bool(collision_batch(state.p[None], state.R[None], GapBatch([gap]), collider)[0])


def classify(state: VehicleState, collider: Collider, gap: GapSpec) -> RegionLabel:
    labels, x = classify_batch(state.p[None], state.R[None], GapBatch([gap]), collider)
    return RegionLabel(Region(labels[0]), float(x[0]))


def visible_count_batch(p, R, points_world, fov_deg):
    """Points within fov/2 of the body +x axis: (N,) counts.

    points_world is (N, M, 3); degenerate zero-range points count as seen.
    """
    rel = points_world - p[:, None, :]
    body = np.einsum("nkj,nji->nki", rel, R)  # R^T applied to each point
    norms = np.linalg.norm(body, axis=2)
    cos_half = math.cos(math.radians(fov_deg) / 2.0)
    cosang = np.where(norms > 1e-12, body[..., 0] / np.maximum(norms, 1e-12), 1.0)
    return np.sum(cosang >= cos_half, axis=1)


def visible_count(state: VehicleState, points_world, fov_deg) -> int:
    if not 0.0 < fov_deg <= 360.0:
        raise ValueError("fov must be in (0, 360] degrees")
    pts = np.asarray(points_world, dtype=np.float64)
    return int(visible_count_batch(state.p[None], state.R[None], pts[None], fov_deg)[0])


_SQ3 = math.sqrt(3.0)

# hole boundary table, gap-plane coordinates in meters
_PRESET_TABLE = {
    ("rectangle", "simple"): [(0.25, 0.10), (-0.25, 0.10), (-0.25, -0.10), (0.25, -0.10)],
    ("rectangle", "hard"): [(0.22, 0.08), (-0.22, 0.08), (-0.22, -0.08), (0.22, -0.08)],
    ("rhombus", "simple"): [(0.42, 0.0), (0.0, 0.12), (-0.42, 0.0), (0.0, -0.12)],
    ("rhombus", "hard"): [(0.40, 0.0), (0.0, 0.10), (-0.40, 0.0), (0.0, -0.10)],
    ("triangle", "simple"): [(0.24 * _SQ3, 0.0), (0.0, 0.24), (-0.24 * _SQ3, 0.0)],
    ("triangle", "hard"): [(0.22 * _SQ3, 0.0), (0.0, 0.22), (-0.22 * _SQ3, 0.0)],
    ("ellipse", "simple"): (0.30, 0.10),
    ("ellipse", "hard"): (0.30, 0.10),
    ("parallelogram", "simple"): [(0.18, 0.0), (-0.18, 0.26), (-0.18, 0.0), (0.18, -0.26)],
    ("parallelogram", "hard"): [(0.16, 0.0), (-0.16, 0.24), (-0.16, 0.0), (0.16, -0.24)],
}

PRESET_NAMES = tuple(f"{shape}-{level}" for (shape, level) in _PRESET_TABLE)


def gap_preset(name, center=(0.0, 0.0, 0.0), normal=(1.0, 0.0, 0.0), roll=0.0,
               thickness=DEFAULT_THICKNESS) -> GapSpec:
    """Built-in hole geometry by name, e.g. 'rectangle-simple'."""
    try:
        shape, level = name.rsplit("-", 1)
        boundary = _PRESET_TABLE[(shape, level)]
    except (ValueError, KeyError):
        raise GapSpecError(f"unknown gap preset {name!r}; options: {PRESET_NAMES}")
    return GapSpec(shape, boundary, center, normal, roll, thickness)
