"""Computational geometry shared by rewards and tools.

Convex hulls (monotone chain), polygon areas and clipping, signed distances,
pinhole projection, and PCA-fitted oriented boxes. Everything is double
precision with a 1e-12 epsilon for orientation and degeneracy tests; no
exact-arithmetic predicates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadArgs

EPS = 1e-12

Vec2 = tuple[float, float]


@dataclass(frozen=True)
class Degenerate:
    """Hull of collinear input: a segment (or a single point)."""

    kind: str  # "segment" or "point"
    points: tuple[Vec2, ...]


@dataclass(frozen=True)
class ConvexPolygon:
    """Counter-clockwise vertex loop, implicitly closed, area >= 0."""

    vertices: tuple[Vec2, ...]

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise BadArgs("a convex polygon needs at least 3 vertices")

    @property
    def centroid(self) -> Vec2:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return (sum(xs) / len(xs), sum(ys) / len(ys))


Hull = ConvexPolygon | Degenerate


def _cross(o: Vec2, a: Vec2, b: Vec2) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: list[Vec2]) -> Hull:
    """Monotone-chain hull; collinear input collapses to a Degenerate."""
    if not points:
        raise BadArgs("empty point set")
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if len(pts) == 1:
        return Degenerate("point", (pts[0],))
    if len(pts) == 2:
        return Degenerate("segment", (pts[0], pts[1]))

    def half(seq):
        out: list[Vec2] = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= EPS:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    verts = lower[:-1] + upper[:-1]
    if len(verts) < 3:
        return Degenerate("segment", (pts[0], pts[-1]))
    return ConvexPolygon(tuple(verts))


def polygon_area(p: Hull | None) -> float:
    """Shoelace area; Degenerate and Empty count as 0."""
    if p is None or isinstance(p, Degenerate):
        return 0.0
    v = p.vertices
    s = 0.0
    for i in range(len(v)):
        x0, y0 = v[i]
        x1, y1 = v[(i + 1) % len(v)]
        s += x0 * y1 - x1 * y0
    return abs(s) / 2.0


def _clean_loop(verts: list[Vec2]) -> list[Vec2]:
    # drop near-duplicate and collinear vertices left behind by clipping
    out: list[Vec2] = []
    for p in verts:
        if not out or abs(p[0] - out[-1][0]) > EPS or abs(p[1] - out[-1][1]) > EPS:
            out.append(p)
    if len(out) >= 2 and abs(out[0][0] - out[-1][0]) <= EPS and abs(out[0][1] - out[-1][1]) <= EPS:
        out.pop()
    if len(out) < 3:
        return out
    cleaned: list[Vec2] = []
    n = len(out)
    for i in range(n):
        prev, cur, nxt = out[i - 1], out[i], out[(i + 1) % n]
        if abs(_cross(prev, cur, nxt)) > EPS:
            cleaned.append(cur)
    return cleaned


def convex_intersection(a: ConvexPolygon, b: ConvexPolygon) -> ConvexPolygon | None:
    """Sutherland-Hodgman clip of a by b's half-planes; None when empty."""
    output = list(a.vertices)
    clip = b.vertices
    n = len(clip)
    for i in range(n):
        if not output:
            return None
        cp1, cp2 = clip[i], clip[(i + 1) % n]
        input_list = output
        output = []
        s = input_list[-1]
        for e in input_list:
            e_in = _cross(cp1, cp2, e) >= -EPS
            s_in = _cross(cp1, cp2, s) >= -EPS
            if e_in:
                if not s_in:
                    output.append(_segment_line_intersection(s, e, cp1, cp2))
                output.append(e)
            elif s_in:
                output.append(_segment_line_intersection(s, e, cp1, cp2))
            s = e
    verts = _clean_loop(output)
    if len(verts) < 3:
        return None
    poly = ConvexPolygon(tuple(verts))
    if polygon_area(poly) < EPS:
        return None
    return poly


def _segment_line_intersection(s: Vec2, e: Vec2, cp1: Vec2, cp2: Vec2) -> Vec2:
    dc = (cp1[0] - cp2[0], cp1[1] - cp2[1])
    dp = (s[0] - e[0], s[1] - e[1])
    n1 = cp1[0] * cp2[1] - cp1[1] * cp2[0]
    n2 = s[0] * e[1] - s[1] * e[0]
    denom = dc[0] * dp[1] - dc[1] * dp[0]
    return ((n1 * dp[0] - n2 * dc[0]) / denom, (n1 * dp[1] - n2 * dc[1]) / denom)


def hull_iou(a: Hull, b: Hull) -> float:
    """Intersection-over-union of two hulls; degenerate hulls score 0."""
    if isinstance(a, Degenerate) or isinstance(b, Degenerate):
        return 0.0
    inter = polygon_area(convex_intersection(a, b))
    union = polygon_area(a) + polygon_area(b) - inter
    if union <= EPS:
        return 0.0
    return inter / union


def _point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> float:
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 <= EPS * EPS:
        return float(np.hypot(px - ax, py - ay))
    t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / seg2))
    return float(np.hypot(px - (ax + t * dx), py - (ay + t * dy)))


def signed_distance_to_hull(p: Vec2, hull: ConvexPolygon) -> float:
    """Distance to the nearest boundary point, negative iff strictly inside."""
    if isinstance(hull, Degenerate):
        raise BadArgs("degenerate hull has no interior")
    v = hull.vertices
    n = len(v)
    boundary = min(_point_segment_distance(p, v[i], v[(i + 1) % n]) for i in range(n))
    inside = all(_cross(v[i], v[(i + 1) % n], p) >= -EPS for i in range(n))
    return -boundary if inside else boundary


def point_in_hull(p: Vec2, hull: Hull) -> bool:
    """Boundary counts as inside; degenerate hulls contain nothing."""
    if isinstance(hull, Degenerate):
        return False
    return signed_distance_to_hull(p, hull) <= 0.0


# ---------------------------------------------------------------------------
# 3D: pinhole projection and PCA oriented boxes

@dataclass(frozen=True)
class OrientedBox3:
    """Oriented 3D box: axes columns are unit vectors, det +1.

    Degenerate boxes (rank-deficient input) carry exact zero extents on the
    null axes and set the flag.
    """

    center: tuple[float, float, float]
    axes: tuple[tuple[float, float, float], ...]  # 3x3, column i = axis i
    extent: tuple[float, float, float]
    degenerate: bool = False

    def axes_matrix(self) -> np.ndarray:
        return np.array(self.axes, dtype=float)

    def corners(self) -> np.ndarray:
        """8x3 corners; corner i uses sign bits of i per axis (bit j -> axis j)."""
        r = self.axes_matrix()
        c = np.array(self.center, dtype=float)
        half = np.array(self.extent, dtype=float) / 2.0
        corners = np.empty((8, 3), dtype=float)
        for i in range(8):
            signs = np.array([1.0 if (i >> j) & 1 else -1.0 for j in range(3)])
            corners[i] = c + r @ (signs * half)
        return corners


BOX_EDGES: list[tuple[int, int]] = [
    (i, j) for i in range(8) for j in range(i + 1, 8) if bin(i ^ j).count("1") == 1
]


def project_points(points3: np.ndarray, focal_length_px: float, width: int, height: int) -> np.ndarray:
    """Pinhole projection to normalized image coordinates.

    u = (f*x/z + W/2) / W, v = (f*y/z + H/2) / H.
    """
    pts = np.asarray(points3, dtype=float).reshape(-1, 3)
    bad = np.flatnonzero(pts[:, 2] <= 0)
    if bad.size:
        raise BadArgs(f"points with nonpositive depth at indices {bad.tolist()}")
    u = (focal_length_px * pts[:, 0] / pts[:, 2] + width / 2.0) / width
    v = (focal_length_px * pts[:, 1] / pts[:, 2] + height / 2.0) / height
    return np.stack([u, v], axis=1)


def backproject_pixel(u: float, v: float, depth: float, focal_length_px: float,
                      width: int, height: int) -> tuple[float, float, float]:
    """Camera-frame point for integer pixel (u=column, v=row) at the given depth."""
    x = (u - width / 2.0) * depth / focal_length_px
    y = (v - height / 2.0) * depth / focal_length_px
    return (x, y, depth)


def backproject_grid(depth: np.ndarray, focal_length_px: float) -> np.ndarray:
    """Back-project every pixel of a depth grid, row-major order, N x 3."""
    h, w = depth.shape
    vs, us = np.mgrid[0:h, 0:w]
    d = np.asarray(depth, dtype=float)
    x = (us - w / 2.0) * d / focal_length_px
    y = (vs - h / 2.0) * d / focal_length_px
    return np.stack([x.ravel(), y.ravel(), d.ravel()], axis=1)


def _fix_axis_signs(axes: np.ndarray) -> np.ndarray:
    # column sign rule: largest-magnitude component made positive (first index wins)
    fixed = axes.copy()
    for i in range(3):
        col = fixed[:, i]
        j = int(np.argmax(np.abs(col)))
        if col[j] < 0:
            fixed[:, i] = -col
    if np.linalg.det(fixed) < 0:
        fixed[:, 2] = -fixed[:, 2]
    return fixed


def pca_obb(points3: np.ndarray, rank_tol: float = 1e-9) -> OrientedBox3:
    """PCA-fitted oriented box: axes are covariance eigenvectors by descending
    eigenvalue, extent from min/max projections. Every input point lies inside
    the box up to floating-point slack.
    """
    pts = np.asarray(points3, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 4:
        raise BadArgs(f"pca_obb needs at least 4 points, got {pts.shape[0]}")
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / pts.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    axes = _fix_axis_signs(eigvecs[:, order])

    proj = centered @ axes
    lo = proj.min(axis=0)
    hi = proj.max(axis=0)
    extent = hi - lo
    null_axes = eigvals <= rank_tol * max(eigvals[0], rank_tol)
    extent = np.where(null_axes, 0.0, extent)
    center = mean + axes @ ((hi + lo) / 2.0)
    return OrientedBox3(
        center=tuple(center.tolist()),
        axes=tuple(tuple(row) for row in axes.tolist()),
        extent=tuple(extent.tolist()),
        degenerate=bool(null_axes.any()),
    )
