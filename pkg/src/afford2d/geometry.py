"""2-D points, rigid transforms, labeled boundary shapes and cloud sampling.

Shared by the simulator (object surfaces, contact points) and the affordance
code (clouds, ball counting). Points are float64 numpy arrays of length 2;
clouds stack them as (n, 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (radians, counterclockwise) followed by translation."""

    angle: float = 0.0
    translation: tuple = (0.0, 0.0)

    @property
    def matrix(self):
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def apply(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix.T + np.asarray(self.translation)

    def inverse(self):
        c, s = math.cos(self.angle), math.sin(self.angle)
        tx, ty = self.translation
        # R^-1 (p - t)
        return RigidTransform(-self.angle, (-(c * tx + s * ty), -(-s * tx + c * ty)))

    def compose(self, other):
        """self after other: (self o other)(p) = self(other(p))."""
        t = self.apply(np.asarray(other.translation))
        return RigidTransform(self.angle + other.angle, (float(t[0]), float(t[1])))


IDENTITY = RigidTransform()


@dataclass
class Segment:
    a: np.ndarray
    b: np.ndarray
    label: str

    @property
    def length(self):
        return float(np.hypot(*(self.b - self.a)))


@dataclass
class BoundaryShape:
    """Ordered labeled line segments forming an open or closed outline."""

    segments: list = field(default_factory=list)

    def add(self, a, b, label):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ContractViolation("segment endpoints must be finite")
        if np.hypot(*(b - a)) <= 0.0:
            raise ContractViolation("degenerate zero-length segment")
        self.segments.append(Segment(a, b, label))
        return self

    def add_polyline(self, points, label, closed=False):
        pts = [np.asarray(p, dtype=np.float64) for p in points]
        for i in range(len(pts) - 1):
            self.add(pts[i], pts[i + 1], label)
        if closed:
            self.add(pts[-1], pts[0], label)
        return self

    @property
    def total_length(self):
        return sum(s.length for s in self.segments)

    @property
    def labels(self):
        seen = []
        for s in self.segments:
            if s.label not in seen:
                seen.append(s.label)
        return seen


@dataclass
class PointCloud:
    """Sampled object boundary: (n, 2) coordinates plus a part label per point."""

    points: np.ndarray
    labels: list
    object_id: str = ""

    def __len__(self):
        return self.points.shape[0]

    def transformed(self, tf):
        return PointCloud(tf.apply(self.points), list(self.labels), self.object_id)


def sample_boundary(shape, n, seed, object_id=""):
    """Sample ``n`` points on a boundary, density proportional to segment length.

    Stratified arc-length sampling: position i is jittered inside the i-th of
    n equal strata of the total length, then mapped onto segments, so
    per-segment counts follow the length proportions with low variance.
    Deterministic per seed. Part labels are inherited from the segment hit.
    """
    if n < 1:
        raise ContractViolation("sample_boundary: n must be >= 1")
    if not shape.segments:
        raise ContractViolation("sample_boundary: shape has no segments")
    lengths = np.array([s.length for s in shape.segments])
    total = float(lengths.sum())
    if total <= 0.0:
        raise ContractViolation("sample_boundary: degenerate shape")
    rng = np.random.default_rng(seed)
    ts = (np.arange(n) + rng.uniform(size=n)) / n * total
    bounds = np.cumsum(lengths)
    pts = np.empty((n, 2))
    labels = []
    seg_idx = np.searchsorted(bounds, ts, side="right")
    seg_idx = np.minimum(seg_idx, len(shape.segments) - 1)
    starts = bounds - lengths
    for i in range(n):
        s = shape.segments[seg_idx[i]]
        local = (ts[i] - starts[seg_idx[i]]) / lengths[seg_idx[i]]
        pts[i] = s.a + local * (s.b - s.a)
        labels.append(s.label)
    return PointCloud(pts, labels, object_id)


def to_world(cloud, tf):
    return cloud.transformed(tf)


def to_local(point, tf):
    return tf.inverse().apply(np.asarray(point, dtype=np.float64))


def count_in_ball(points, center, r):
    """Number of points strictly inside the open Euclidean ball of radius r."""
    if r <= 0.0:
        raise ContractViolation("count_in_ball: radius must be positive")
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return 0
    d = pts - np.asarray(center, dtype=np.float64)
    return int(np.count_nonzero(np.hypot(d[:, 0], d[:, 1]) < r))


def closest_point_on_segment(p, a, b):
    """Closest point to p on segment ab and its parameter t in [0, 1]."""
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float((p - a) @ ab) / denom
    t = min(1.0, max(0.0, t))
    return a + t * ab, t


def segments_intersect(p1, p2, p3, p4):
    """Proper or touching intersection of segments p1p2 and p3p4."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, p3):
        return True
    if o2 == 0 and on_seg(p1, p2, p4):
        return True
    if o3 == 0 and on_seg(p3, p4, p1):
        return True
    return o4 == 0 and on_seg(p3, p4, p2)


def cloud_lines(cloud, scores=None):
    """Export format: one line per point, "x y label score...".

    ``scores`` is an optional (n, channels) array appended per point; the
    affordance module passes its per-channel map here.
    """
    lines = []
    for i in range(len(cloud)):
        parts = [repr(float(cloud.points[i, 0])), repr(float(cloud.points[i, 1])),
                 cloud.labels[i]]
        if scores is not None:
            parts.extend(repr(float(s)) for s in np.atleast_2d(scores)[i])
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def parse_cloud_lines(text):
    """Inverse of cloud_lines: returns (PointCloud, scores or None)."""
    pts, labels, scores = [], [], []
    for ln, raw in enumerate(text.splitlines(), start=1):
        raw = raw.strip()
        if not raw or raw.startswith("#"):
            continue
        parts = raw.split()
        if len(parts) < 3:
            raise ContractViolation(f"cloud line {ln}: expected 'x y label ...', got {raw!r}")
        try:
            pts.append([float(parts[0]), float(parts[1])])
            scores.append([float(v) for v in parts[3:]])
        except ValueError as e:
            raise ContractViolation(f"cloud line {ln}: {e}") from e
        labels.append(parts[2])
    if not pts:
        raise ContractViolation("cloud file has no points")
    width = {len(s) for s in scores}
    if len(width) != 1:
        raise ContractViolation("cloud file has inconsistent score columns")
    arr = np.array(scores) if width.pop() > 0 else None
    return PointCloud(np.array(pts), labels), arr
