"""Closed periodic cubic NURBS curves and point-in-region queries.

A curve is given by ``N`` control points with positive weights on a uniform
periodic knot vector: segment ``j`` blends control points ``j..j+3 (mod N)``
with the cardinal cubic B-spline functions, so the parameter lives on
``[0, N)`` and the curve closes with C^2 continuity.  Containment is decided
by ray crossing counts against an adaptively refined polyline.
"""

from __future__ import annotations

import csv
import math

import numpy as np
from scipy.spatial import cKDTree


def _blend(s):
    """Cardinal cubic B-spline values/derivatives at local coordinate s."""
    s = np.asarray(s, dtype=float)
    b = np.stack([(1 - s) ** 3, 3 * s ** 3 - 6 * s ** 2 + 4,
                  -3 * s ** 3 + 3 * s ** 2 + 3 * s + 1, s ** 3]) / 6.0
    db = np.stack([-3 * (1 - s) ** 2, 9 * s ** 2 - 12 * s,
                   -9 * s ** 2 + 6 * s + 3, 3 * s ** 2]) / 6.0
    d2b = np.stack([6 * (1 - s), 18 * s - 12, -18 * s + 6, 6 * s]) / 6.0
    return b, db, d2b


class NurbsCurve:
    """Closed rational B-spline curve of degree 3.

    Parameters
    ----------
    control : (N, 2) array of control points, N >= 4
    weights : (N,) array of positive weights
    degree : spline degree; only the periodic cubic case is supported
    """

    def __init__(self, control, weights, degree=3):
        control = np.ascontiguousarray(control, dtype=float)
        weights = np.ascontiguousarray(weights, dtype=float)
        if degree != 3:
            raise NotImplementedError("only periodic cubic curves are supported")
        if control.ndim != 2 or control.shape[1] != 2 or control.shape[0] < 4:
            raise ValueError("control net must be (N, 2) with N >= 4")
        if weights.shape != (control.shape[0],) or not (weights > 0).all():
            raise ValueError("weights must be positive, one per control point")
        control.setflags(write=False)
        weights.setflags(write=False)
        self.control = control
        self.weights = weights
        self.degree = degree
        self.n_ctrl = control.shape[0]
        self._cache = {}

    @property
    def period(self) -> float:
        return float(self.n_ctrl)

    @property
    def knots(self) -> np.ndarray:
        """One period of the uniform knot vector."""
        return np.arange(self.n_ctrl + 1, dtype=float)

    def point(self, t):
        """Curve point with first and second parametric derivatives.

        ``t`` may be scalar or array; returns arrays shaped ``t.shape + (2,)``.
        """
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        N = self.n_ctrl
        tm = np.mod(t, N)
        j = np.minimum(tm.astype(np.intp), N - 1)
        s = tm - j
        b, db, d2b = _blend(s)
        idx = (j[None, :] + np.arange(4)[:, None]) % N
        w = self.weights[idx]
        pw = self.control[idx] * w[..., None]
        A = np.einsum("kt,ktd->td", b, pw)
        dA = np.einsum("kt,ktd->td", db, pw)
        d2A = np.einsum("kt,ktd->td", d2b, pw)
        W = np.einsum("kt,kt->t", b, w)[:, None]
        dW = np.einsum("kt,kt->t", db, w)[:, None]
        d2W = np.einsum("kt,kt->t", d2b, w)[:, None]
        C = A / W
        dC = (dA - C * dW) / W
        d2C = (d2A - 2 * dC * dW - C * d2W) / W
        if scalar:
            return C[0], dC[0], d2C[0]
        return C, dC, d2C

    def _orientation(self) -> float:
        try:
            return self._orient
        except AttributeError:
            pts = self.polyline(1e-6)
            x, y = pts[:, 0], pts[:, 1]
            area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
            self._orient = 1.0 if area2 > 0 else -1.0
            return self._orient

    def outward_normal(self, t):
        """Unit normal pointing out of the enclosed region."""
        _, dC, _ = self.point(t)
        dC = np.atleast_2d(dC)
        speed = np.linalg.norm(dC, axis=1, keepdims=True)
        if np.any(speed <= 1e-12):
            raise ValueError("degenerate tangent, normal undefined")
        tan = dC / speed
        n = np.column_stack([tan[:, 1], -tan[:, 0]]) * self._orientation()
        return n[0] if np.asarray(t).ndim == 0 else n

    def polyline(self, tol: float) -> np.ndarray:
        """Vertices of a polyline within chord error ``tol`` of the curve."""
        return self._refined(tol)[1]

    def _refined(self, tol):
        if tol in self._cache:
            return self._cache[tol]
        t = np.linspace(0.0, self.period, 4 * self.n_ctrl + 1)
        pts = self.point(t)[0]
        for _ in range(48):
            tm = 0.5 * (t[:-1] + t[1:])
            mid = self.point(tm)[0]
            err = np.linalg.norm(mid - 0.5 * (pts[:-1] + pts[1:]), axis=1)
            bad = err > 0.5 * tol
            if not bad.any():
                break
            keep = np.nonzero(bad)[0]
            t = np.insert(t, keep + 1, tm[keep])
            pts = np.insert(pts, keep + 1, mid[keep], axis=0)
        self._cache[tol] = (t, pts)
        return self._cache[tol]

    def _segment_index(self, tol):
        key = ("segidx", tol)
        if key in self._cache:
            return self._cache[key]
        pts = self.polyline(tol)
        p0, p1 = pts[:-1], pts[1:]
        ylo = np.minimum(p0[:, 1], p1[:, 1])
        yhi = np.maximum(p0[:, 1], p1[:, 1])
        nbin = max(64, int(math.sqrt(len(p0))))
        edges = np.linspace(ylo.min() - 1e-12, yhi.max() + 1e-12, nbin + 1)
        blo = np.searchsorted(edges, ylo, "right") - 1
        bhi = np.searchsorted(edges, yhi, "right") - 1
        buckets = [[] for _ in range(nbin)]
        for i, (a, b) in enumerate(zip(blo, bhi)):
            for k in range(max(a, 0), min(b, nbin - 1) + 1):
                buckets[k].append(i)
        buckets = [np.asarray(b, dtype=np.intp) for b in buckets]
        self._cache[key] = (edges, buckets, p0, p1)
        return self._cache[key]

    def contains(self, x) -> bool:
        return bool(self.contains_many(np.asarray(x, dtype=float)[None, :])[0])

    def contains_many(self, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Ray-crossing containment for many points; points within ``tol`` of
        the boundary count as outside."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        edges, buckets, p0, p1 = self._segment_index(tol)
        out = np.zeros(len(pts), dtype=bool)
        binno = np.clip(np.searchsorted(edges, pts[:, 1], "right") - 1, 0, len(buckets) - 1)
        for b in np.unique(binno):
            rows = np.nonzero(binno == b)[0]
            seg = buckets[b]
            if seg.size == 0:
                continue
            a0, a1 = p0[seg], p1[seg]
            px = pts[rows, 0][:, None]
            py = pts[rows, 1][:, None]
            y0, y1 = a0[:, 1][None, :], a1[:, 1][None, :]
            x0, x1 = a0[:, 0][None, :], a1[:, 0][None, :]
            straddle = (y0 > py) != (y1 > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            crossings = np.sum(straddle & (xc > px), axis=1)
            out[rows] = (crossings % 2) == 1
        near = self._distance_to_polyline(pts, tol) <= tol
        out[near] = False
        return out

    def _distance_to_polyline(self, pts, tol):
        key = ("vtree", tol)
        if key not in self._cache:
            self._cache[key] = cKDTree(self.polyline(tol))
        poly = self.polyline(tol)
        seglen = np.linalg.norm(np.diff(poly, axis=0), axis=1).max()
        d, _ = self._cache[key].query(pts)
        dist = np.asarray(d, dtype=float)
        refine = dist <= seglen + 10 * tol
        if refine.any():
            dist[refine] = _point_segment_distance(pts[refine], poly)
        return dist

    def sample_boundary(self, count: int):
        """``count`` points at (approximately) equal arc length, with outward
        unit normals and their curve parameters; the first sample sits at
        parameter 0."""
        if count < 2:
            raise ValueError("count must be at least 2")
        t, pts = self._refined(1e-9)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        targets = s[-1] * np.arange(count) / count
        tk = np.interp(targets, s, t)
        p = self.point(tk)[0]
        return p, self.outward_normal(tk), tk

    def arc_length(self) -> float:
        _, pts = self._refined(1e-9)
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))

    def area(self) -> float:
        pts = self.polyline(1e-6)
        x, y = pts[:, 0], pts[:, 1]
        return float(abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)) / 2.0)


def _point_segment_distance(pts, poly):
    """Exact min distance from each point to any polyline segment (chunked)."""
    p0, p1 = poly[:-1], poly[1:]
    d = p1 - p0
    len2 = np.einsum("sd,sd->s", d, d)
    out = np.empty(len(pts))
    chunk = max(1, int(5e6 / max(1, len(p0))))
    for lo in range(0, len(pts), chunk):
        q = pts[lo:lo + chunk]
        w = q[:, None, :] - p0[None, :, :]
        u = np.clip(np.einsum("qsd,sd->qs", w, d) / len2, 0.0, 1.0)
        proj = p0[None, :, :] + u[..., None] * d[None, :, :]
        out[lo:lo + chunk] = np.linalg.norm(q[:, None, :] - proj, axis=2).min(axis=1)
    return out


def load_curve(path: str) -> NurbsCurve:
    """Read an ``x,y,w`` control-net CSV (optional header) into a curve."""
    rows = []
    with open(path, newline="") as f:
        for rec in csv.reader(f):
            if not rec or rec[0].strip().lower() in ("x", ""):
                continue
            rows.append([float(v) for v in rec[:3]])
    arr = np.asarray(rows)
    return NurbsCurve(arr[:, :2], arr[:, 2])
