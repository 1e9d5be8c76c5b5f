"""Planar polygon primitives: ring area, point classification, distances.

Coordinates are taken as given (projected units); nothing here converts
units or does geodesic math.
"""
from dataclasses import dataclass, field

import numpy as np

from . import _backend

OUTSIDE, INSIDE, BOUNDARY = 0, 1, 2


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class TractPolygon:
    """One area: an exterior ring plus optional hole rings.

    Rings are ``(k, 2)`` float arrays whose first and last points coincide.
    """

    tract_id: str
    exterior: np.ndarray
    holes: tuple = field(default=())

    def __post_init__(self):
        ext = _as_ring(self.exterior, self.tract_id)
        holes = tuple(_as_ring(h, self.tract_id) for h in self.holes)
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "holes", holes)

    @property
    def rings(self):
        return (self.exterior,) + self.holes

    @property
    def bbox(self):
        e = self.exterior
        return float(e[:, 0].min()), float(e[:, 1].min()), float(e[:, 0].max()), float(e[:, 1].max())

    @property
    def area(self):
        return abs(ring_area(self.exterior)) - sum(abs(ring_area(h)) for h in self.holes)

    def centroid(self):
        """Area centroid of the exterior ring."""
        x, y = self.exterior[:, 0], self.exterior[:, 1]
        cross = x[:-1] * y[1:] - x[1:] * y[:-1]
        a = cross.sum() / 2.0
        cx = ((x[:-1] + x[1:]) * cross).sum() / (6.0 * a)
        cy = ((y[:-1] + y[1:]) * cross).sum() / (6.0 * a)
        return float(cx), float(cy)

    def classify(self, x, y):
        """Classify points: 0 outside, 1 inside, 2 on any ring boundary.

        Points inside a hole are outside.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        out = _backend.ring_contains(x, y, self.exterior).copy()
        for h in self.holes:
            cand = out == INSIDE
            if not cand.any():
                break
            hc = _backend.ring_contains(x[cand], y[cand], h)
            sub = out[cand]
            sub[hc == INSIDE] = OUTSIDE
            sub[hc == BOUNDARY] = BOUNDARY
            out[cand] = sub
        return out


def _as_ring(ring, tract_id):
    r = np.ascontiguousarray(ring, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] != 2:
        raise GeometryError(f"tract {tract_id!r}: ring must be a list of (x, y) pairs")
    if r.shape[0] < 4:
        raise GeometryError(f"tract {tract_id!r}: ring needs at least 4 points, got {r.shape[0]}")
    if not np.array_equal(r[0], r[-1]):
        raise GeometryError(f"tract {tract_id!r}: ring is not closed")
    if not np.all(np.isfinite(r)):
        raise GeometryError(f"tract {tract_id!r}: non-finite coordinate")
    if ring_area(r) == 0.0:
        raise GeometryError(f"tract {tract_id!r}: degenerate ring with zero area")
    return r


def ring_area(ring):
    """Signed shoelace area of a closed ring (positive if counter-clockwise)."""
    x, y = ring[:, 0], ring[:, 1]
    return float(0.5 * np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


def _segments(poly):
    return np.concatenate([np.hstack([r[:-1], r[1:]]) for r in poly.rings])


def _point_segment_dist(P, A, B):
    # P (k, 2) against segments A->B (m, 2) -> (k, m)
    AB = B - A
    L2 = np.einsum("ij,ij->i", AB, AB)
    AP = P[:, None, :] - A[None, :, :]
    t = np.clip(np.einsum("kmj,mj->km", AP, AB) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    proj = A[None] + t[..., None] * AB[None]
    d = P[:, None, :] - proj
    return np.sqrt(np.einsum("kmj,kmj->km", d, d))


def _orient(ax, ay, bx, by, cx, cy):
    return np.sign((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))


def segments_intersect(S, T):
    """Pairwise proper-crossing test, shape ``(len(S), len(T))``.

    Touching and collinear contacts are left to the distance computation.
    """
    p1x, p1y, p2x, p2y = (S[:, k][:, None] for k in range(4))
    q1x, q1y, q2x, q2y = (T[:, k][None, :] for k in range(4))
    o1 = _orient(p1x, p1y, p2x, p2y, q1x, q1y)
    o2 = _orient(p1x, p1y, p2x, p2y, q2x, q2y)
    o3 = _orient(q1x, q1y, q2x, q2y, p1x, p1y)
    o4 = _orient(q1x, q1y, q2x, q2y, p2x, p2y)
    proper = (o1 * o2 < 0) & (o3 * o4 < 0)
    return proper


def polygon_distance(a, b):
    """Minimum distance between two polygons' closed regions.

    Zero when they touch or overlap (including one containing the other).
    """
    if np.any(a.classify(b.exterior[:-1, 0], b.exterior[:-1, 1]) != OUTSIDE):
        return 0.0
    if np.any(b.classify(a.exterior[:-1, 0], a.exterior[:-1, 1]) != OUTSIDE):
        return 0.0
    S, T = _segments(a), _segments(b)
    if segments_intersect(S, T).any():
        return 0.0
    d1 = _point_segment_dist(S[:, :2], T[:, :2], T[:, 2:]).min()
    d2 = _point_segment_dist(T[:, :2], S[:, :2], S[:, 2:]).min()
    return float(min(d1, d2))


def random_points_in(poly, k, rng):
    """Rejection-sample ``k`` points strictly inside ``poly``."""
    x0, y0, x1, y1 = poly.bbox
    out = np.empty((0, 2))
    while out.shape[0] < k:
        need = max(16, 2 * (k - out.shape[0]))
        cand = np.column_stack([rng.uniform(x0, x1, need), rng.uniform(y0, y1, need)])
        keep = poly.classify(cand[:, 0], cand[:, 1]) == INSIDE
        out = np.vstack([out, cand[keep]])
    return out[:k]
