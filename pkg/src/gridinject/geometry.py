"""Planar geometry kernel: windings, distances, intersections, orders.

Conventions used throughout the package:

* a point is an array-like of shape ``(2,)``;
* a polyline is an array of shape ``(n, 2)`` listing vertices in order;
  nothing is repeated for closure, callers pass ``closed=True`` instead;
* all predicates are tolerance-guarded rather than symbolic: a winding
  number is refused (code ``on-curve``) when the probe sits within
  ``tau_on`` of the curve, because the angle sum is ill-conditioned there.

The winding number of a closed polyline around an off-curve point is the
sum of the signed turning angles of the difference vectors, divided by
2 pi.  For a polyline this sum is exactly 2 pi times an integer, so the
numeric residual against the nearest integer is asserted (it measures
accumulated floating-point error, not discretization error).
"""

from __future__ import annotations

import numpy as np

from .errors import GridInjectError

__all__ = [
    "point_polyline_distance",
    "points_segment_distance",
    "winding_number",
    "segment_intersection",
    "polyline_self_intersections",
    "circular_order",
    "cyclic_shift_equal",
    "separated",
    "polyline_length",
    "resample_polyline",
]


def _close(poly: np.ndarray) -> np.ndarray:
    return np.vstack([poly, poly[:1]])


def points_segment_distance(points, a, b) -> np.ndarray:
    """Distance from each of ``points`` (n, 2) to the segment [a, b]."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    denom = float(d @ d)
    if denom == 0.0:
        return np.linalg.norm(pts - a, axis=1)
    t = np.clip(((pts - a) @ d) / denom, 0.0, 1.0)
    proj = a + t[:, None] * d
    return np.linalg.norm(pts - proj, axis=1)


def point_polyline_distance(point, poly, closed: bool = False) -> float:
    """Distance from one point to a polyline, vectorized over segments."""
    p = np.asarray(point, dtype=float)
    v = np.asarray(poly, dtype=float)
    if closed:
        v = _close(v)
    if len(v) == 1:
        return float(np.linalg.norm(p - v[0]))
    a, b = v[:-1], v[1:]
    d = b - a
    denom = np.einsum("ij,ij->i", d, d)
    safe = np.where(denom == 0.0, 1.0, denom)
    t = np.clip(np.einsum("ij,ij->i", p - a, d) / safe, 0.0, 1.0)
    t = np.where(denom == 0.0, 0.0, t)
    proj = a + t[:, None] * d
    return float(np.min(np.linalg.norm(p - proj, axis=1)))


def winding_number(
    curve,
    point,
    *,
    tau_on: float = 1e-9,
    residual_tol: float = 1e-6,
) -> int:
    """Winding number of a closed polyline around ``point``.

    Raises ``on-curve`` when the point is within ``tau_on`` of the curve or
    when the angle sum fails to be an integer multiple of 2 pi within
    ``residual_tol``.
    """
    p = np.asarray(point, dtype=float)
    v = np.asarray(curve, dtype=float)
    if len(v) < 3:
        raise GridInjectError(
            "degenerate-segment", "winding number needs at least 3 vertices", n=len(v)
        )
    dist = point_polyline_distance(p, v, closed=True)
    if dist < tau_on:
        raise GridInjectError(
            "on-curve",
            "probe sits on the curve within tau_on",
            distance=dist,
            tau_on=tau_on,
            point=p,
        )
    w = (v[:, 0] - p[0]) + 1j * (v[:, 1] - p[1])
    w = np.append(w, w[0])
    total = float(np.sum(np.angle(w[1:] / w[:-1]))) / (2.0 * np.pi)
    n = int(np.rint(total))
    if abs(total - n) > residual_tol:
        raise GridInjectError(
            "on-curve",
            "winding angle sum is not an integer multiple of 2 pi",
            residual=abs(total - n),
            tolerance=residual_tol,
            point=p,
        )
    return n


def segment_intersection(a0, a1, b0, b1, eps: float = 1e-12):
    """Classify the intersection of segments [a0, a1] and [b0, b1].

    Returns a pair ``(kind, data)``:

    * ``("empty", None)`` when the segments do not meet;
    * ``("point", (pt, t, u))`` for a single common point, with parameters
      ``t`` along the first segment and ``u`` along the second;
    * ``("overlap", (lo, hi))`` for a collinear intersection of positive
      length, given by its two endpoints.

    ``eps`` is an absolute tolerance on coordinates of order one.
    """
    a0 = np.asarray(a0, dtype=float)
    a1 = np.asarray(a1, dtype=float)
    b0 = np.asarray(b0, dtype=float)
    b1 = np.asarray(b1, dtype=float)
    r = a1 - a0
    s = b1 - b0
    q = b0 - a0
    rxs = r[0] * s[1] - r[1] * s[0]
    qxr = q[0] * r[1] - q[1] * r[0]
    scale = max(float(np.abs(r).max()), float(np.abs(s).max()), 1e-300)
    if abs(rxs) > eps * scale * scale:
        qxs = q[0] * s[1] - q[1] * s[0]
        t = qxs / rxs
        u = qxr / rxs
        pad = eps / scale
        if -pad <= t <= 1.0 + pad and -pad <= u <= 1.0 + pad:
            pt = a0 + np.clip(t, 0.0, 1.0) * r
            return "point", (pt, float(np.clip(t, 0.0, 1.0)), float(np.clip(u, 0.0, 1.0)))
        return "empty", None
    # parallel
    if abs(qxr) > eps * scale * scale:
        return "empty", None
    # collinear: project the second segment on the first
    rr = float(r @ r)
    if rr == 0.0:
        # first segment degenerates to a point
        if points_segment_distance(a0[None, :], b0, b1)[0] <= eps:
            return "point", (a0.copy(), 0.0, 0.0)
        return "empty", None
    t0 = float((b0 - a0) @ r) / rr
    t1 = float((b1 - a0) @ r) / rr
    lo, hi = min(t0, t1), max(t0, t1)
    lo_c = max(lo, 0.0)
    hi_c = min(hi, 1.0)
    pad = eps / max(float(np.linalg.norm(r)), 1e-300)
    if lo_c > hi_c + pad:
        return "empty", None
    if hi_c - lo_c <= pad:
        tm = 0.5 * (lo_c + hi_c)
        return "point", (a0 + tm * r, float(tm), 0.0)
    return "overlap", (a0 + lo_c * r, a0 + hi_c * r)


def _segment_arrays(poly: np.ndarray, closed: bool):
    """Nonzero segments of a polyline plus their positions in the chain."""
    v = np.asarray(poly, dtype=float)
    if closed:
        v = _close(v)
    a, b = v[:-1], v[1:]
    keep = np.linalg.norm(b - a, axis=1) > 0.0
    return a[keep], b[keep], np.nonzero(keep)[0]


def polyline_self_intersections(
    poly,
    closed: bool = False,
    eps: float = 1e-12,
    endpoint_tol: float = 1e-9,
    max_report: int = 8,
) -> list[dict]:
    """All illegal self-contacts of a polyline.

    Consecutive segments legitimately share one endpoint; everything else
    (crossings, touches, collinear overlaps) is reported.  The scan is a
    sort-and-sweep on bounding boxes followed by exact classification, so
    it stays near-linear for curves without dense contact clusters.
    """
    a, b, chain = _segment_arrays(poly, closed)
    m = len(a)
    if m < 2:
        return []
    n_chain = chain.max() + 1 if m else 0
    xmin = np.minimum(a[:, 0], b[:, 0])
    xmax = np.maximum(a[:, 0], b[:, 0])
    ymin = np.minimum(a[:, 1], b[:, 1])
    ymax = np.maximum(a[:, 1], b[:, 1])
    order = np.argsort(xmin, kind="stable")
    xmin_s = xmin[order]
    violations: list[dict] = []
    for pos in range(m - 1):
        i = order[pos]
        hi = np.searchsorted(xmin_s, xmax[i] + eps, side="right")
        if hi <= pos + 1:
            continue
        js = order[pos + 1 : hi]
        keep = (ymin[js] <= ymax[i] + eps) & (ymax[js] >= ymin[i] - eps)
        for j in js[keep]:
            ii, jj = (i, j) if chain[i] < chain[j] else (j, i)
            adjacent = chain[jj] == chain[ii] + 1
            if closed and chain[ii] == 0 and chain[jj] == n_chain - 1:
                adjacent = True
            kind, data = segment_intersection(a[ii], b[ii], a[jj], b[jj], eps=eps)
            if kind == "empty":
                continue
            if kind == "point":
                pt, _, _ = data
                if adjacent:
                    shared = b[ii] if chain[jj] == chain[ii] + 1 else b[jj]
                    if np.linalg.norm(pt - shared) <= endpoint_tol:
                        continue
                violations.append(
                    {
                        "kind": "crossing",
                        "segments": [int(chain[ii]), int(chain[jj])],
                        "point": pt.tolist(),
                    }
                )
            else:
                lo, hi_pt = data
                violations.append(
                    {
                        "kind": "overlap",
                        "segments": [int(chain[ii]), int(chain[jj])],
                        "point": lo.tolist(),
                        "until": hi_pt.tolist(),
                    }
                )
            if len(violations) >= max_report:
                return violations
    return violations


def circular_order(points, center) -> np.ndarray:
    """Indices of ``points`` sorted by angle around ``center`` (CCW)."""
    pts = np.asarray(points, dtype=float)
    c = np.asarray(center, dtype=float)
    ang = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
    return np.argsort(ang, kind="stable")


def cyclic_shift_equal(seq_a, seq_b) -> bool:
    """True when two integer sequences agree up to a cyclic shift."""
    sa = list(seq_a)
    sb = list(seq_b)
    if len(sa) != len(sb):
        return False
    if not sa:
        return True
    doubled = sb + sb
    return any(doubled[k : k + len(sa)] == sa for k in range(len(sb)))


def _perimeter_coordinate(rect, pts, atol):
    """Map boundary points of a rectangle to arc-length coordinates."""
    x0, y0, x1, y1 = rect
    w, h = x1 - x0, y1 - y0
    if w <= 0 or h <= 0:
        raise GridInjectError("degenerate-order", "rectangle has empty interior", rect=rect)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    out = np.empty(len(pts))
    for k, (x, y) in enumerate(pts):
        if abs(y - y0) <= atol and x0 - atol <= x <= x1 + atol:
            out[k] = np.clip(x - x0, 0, w)
        elif abs(x - x1) <= atol and y0 - atol <= y <= y1 + atol:
            out[k] = w + np.clip(y - y0, 0, h)
        elif abs(y - y1) <= atol and x0 - atol <= x <= x1 + atol:
            out[k] = w + h + np.clip(x1 - x, 0, w)
        elif abs(x - x0) <= atol and y0 - atol <= y <= y1 + atol:
            out[k] = 2 * w + h + np.clip(y1 - y, 0, h)
        else:
            raise GridInjectError(
                "degenerate-order",
                "point does not lie on the rectangle boundary",
                point=[float(x), float(y)],
                rect=list(rect),
            )
    return out


def separated(rect, a, c, b, d, atol: float = 1e-9) -> bool:
    """Whether {a, c} separates b from d on the boundary of ``rect``.

    All four points must lie on the rectangle boundary.  Returns True when
    b and d fall in different components of the boundary with a and c
    removed.  Coincidences among {a, c} and {b, d} against {a, c} raise
    ``degenerate-order``.
    """
    coords = _perimeter_coordinate(rect, [a, c, b, d], atol)
    x0, y0, x1, y1 = rect
    per = 2.0 * ((x1 - x0) + (y1 - y0))
    pa, pc, pb, pd = coords

    def _cyc_dist(u, v):
        diff = abs(u - v) % per
        return min(diff, per - diff)

    if _cyc_dist(pa, pc) <= atol:
        raise GridInjectError("degenerate-order", "separating points coincide", a=a, c=c)
    for name, val in (("b", pb), ("d", pd)):
        if _cyc_dist(val, pa) <= atol or _cyc_dist(val, pc) <= atol:
            raise GridInjectError(
                "degenerate-order",
                f"query point {name} coincides with a separating point",
                value=float(val),
            )
    lo, hi = sorted((pa, pc))
    in_arc_b = lo < pb < hi
    in_arc_d = lo < pd < hi
    return in_arc_b != in_arc_d


def polyline_length(poly) -> float:
    v = np.asarray(poly, dtype=float)
    if len(v) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(v, axis=0), axis=1)))


def resample_polyline(poly, n: int) -> np.ndarray:
    """Resample a polyline at ``n`` points, uniform in arc length."""
    v = np.asarray(poly, dtype=float)
    if len(v) < 2:
        raise GridInjectError("degenerate-segment", "cannot resample fewer than 2 vertices")
    seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total == 0.0:
        raise GridInjectError("degenerate-segment", "polyline has zero length")
    targets = np.linspace(0.0, total, n)
    x = np.interp(targets, s, v[:, 0])
    y = np.interp(targets, s, v[:, 1])
    return np.column_stack([x, y])
