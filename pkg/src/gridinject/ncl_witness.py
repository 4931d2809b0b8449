"""Injective eps-approximations of collapsed curve images.

The collapsing disk map u sends the closed unit disk onto the segment
S = [0, 1] x {0}, so the image of any curve gamma that dives through the
disk doubles back on itself along S.  Still, for every eps > 0 there is
an injective curve phi with the same endpoints as u o gamma and with
sup-distance below eps from it.  This module constructs such a phi for a
polyline curve gamma with endpoints on the outer circle |x| = 2, and
verifies it.

Geometry of the construction.  Fix a collar width delta.  The image of
the circle |x| = 1 + delta is a closed curve Gamma_delta that wraps
tightly around S; its interior is a thin lens-shaped neighborhood of the
segment whose right tip opens at (1, 0) with width y_lens ~ delta^2.
The curve gamma alternates between excursions inside the unit disk and
arcs outside the collar.  Each excursion [a_i, b_i] has a collapsed
image that runs along S from (1, 0) down to (ell_i, 0) and back; it is
replaced by a "staple": the same horizontal run pushed off the axis to a
private height of order delta' << delta^2, entered and left through the
lens tip.  Heights are ordered by the cut coordinate of the crossing
points on the unit circle, so chords of distinct excursions never
interleave (the curve is injective), and an excursion nested inside
another dips at least as deep; its bridge abscissa ell_tilde is nudged
so that nested staples close in the right order.  The collar pieces of
gamma are replaced by detours that stay inside the open collar annulus:
a radial spoke down from the crossing point, a circular arc at a private
radius, and a radial spoke out to the preimage of an entry point E_k
just inside the lens tip.  Pushing these through u keeps them disjoint
from every kept piece of u o gamma because u is injective off the
closed unit disk; a small scheduling problem (solved by topological
order on the arcs' angle intervals) keeps them disjoint from each other.
From E_k the curve drops vertically to the staple height and hops left
to (1, .); entry abscissas and heights are fanned so that all rays from
the tip separate.  A final exact self-intersection sweep over the whole
polyline is the authority; if it fails after retries the construction
reports an honest error instead of a broken witness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridInjectError
from .geometry import point_polyline_distance, polyline_self_intersections
from .planar_maps import PlanarMap, counterexample_inverse, map_from_descriptor
from .tolerances import Tolerances

__all__ = ["ParamCurve", "build_witness", "verify_witness"]

_P = np.array([-1.0, 0.0])
_ONE = np.array([1.0, 0.0])
_MIN_P_DIST = 0.05
_EPS_FLOOR = 64.0 * np.finfo(float).eps


class _Shrink(Exception):
    """Internal: the current collar width delta is too coarse."""

    def __init__(self, reason: str):
        self.reason = reason


class ParamCurve:
    """A polyline with arc-length parametrization on [0, 1]."""

    def __init__(self, vertices):
        v = np.atleast_2d(np.asarray(vertices, dtype=float))
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 2:
            raise GridInjectError(
                "schema-error", "curve must be an (n, 2) array with n >= 2"
            )
        if not np.all(np.isfinite(v)):
            raise GridInjectError("schema-error", "curve has non-finite vertices")
        seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
        keep = np.concatenate([[True], seg > 0.0])
        v = v[keep]
        if len(v) < 2:
            raise GridInjectError("schema-error", "curve has zero length")
        seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        self.vertices = v
        self.params = s / s[-1]
        self.length = float(s[-1])

    def eval(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        x = np.interp(t, self.params, self.vertices[:, 0])
        y = np.interp(t, self.params, self.vertices[:, 1])
        return np.column_stack([np.atleast_1d(x), np.atleast_1d(y)])

    def radius(self, t):
        return np.linalg.norm(self.eval(t), axis=1)

    def to_dict(self) -> dict:
        return {"closed": False, "vertices": self.vertices.tolist()}


# ---------------------------------------------------------------------------
# root finding and sampling helpers
# ---------------------------------------------------------------------------


def _bisect_many(f, lo, hi, iters: int = 64) -> np.ndarray:
    """Vectorized bisection; f(lo) and f(hi) must have opposite signs."""
    lo = np.asarray(lo, dtype=float).copy()
    hi = np.asarray(hi, dtype=float).copy()
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        same = (flo <= 0.0) == (fm <= 0.0)
        lo = np.where(same, mid, lo)
        flo = np.where(same, fm, flo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def _param_grid(curve: ParamCurve, n: int) -> np.ndarray:
    g = np.union1d(np.linspace(0.0, 1.0, n), curve.params)
    return g


def _radius_crossings(curve: ParamCurve, radius: float, n_dense: int) -> np.ndarray:
    """Sorted params where |gamma(t)| crosses ``radius`` transversally."""
    t = _param_grid(curve, n_dense)
    f = curve.radius(t) - radius
    # nudge exact-zero samples so the sign test sees a crossing, not a root
    for _ in range(3):
        hit = f == 0.0
        if not hit.any():
            break
        t = t.copy()
        t[hit] = np.clip(t[hit] + 3e-13, 0.0, 1.0)
        f = curve.radius(t) - radius
    sgn = np.sign(f)
    flip = np.nonzero(sgn[:-1] * sgn[1:] < 0.0)[0]
    if len(flip) == 0:
        return np.empty(0)
    fun = lambda s: curve.radius(s) - radius
    roots = _bisect_many(fun, t[flip], t[flip + 1])
    return np.sort(roots)


def _adaptive_image(eval_pts, t0: float, t1: float, n0: int, max_gap: float,
                    max_pts: int = 65536, min_dt: float = 1e-9):
    """Sample a param -> R^2 path and refine until image gaps are small."""
    t = np.linspace(t0, t1, n0)
    p = eval_pts(t)
    for _ in range(24):
        gap = np.linalg.norm(np.diff(p, axis=0), axis=1)
        bad = (gap > max_gap) & (np.diff(t) > min_dt)
        if not bad.any() or len(t) >= max_pts:
            break
        mids = 0.5 * (t[:-1][bad] + t[1:][bad])
        t = np.concatenate([t, mids])
        p = np.vstack([p, eval_pts(mids)])
        order = np.argsort(t, kind="stable")
        t, p = t[order], p[order]
    return t, p


def _batch_polyline_distance(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distances from many points to a closed polyline, chunked over edges."""
    points = np.atleast_2d(points)
    a_all = poly
    b_all = np.vstack([poly[1:], poly[:1]])
    k = len(points)
    best = np.full(k, np.inf)
    step = max(1, int(2_000_000 // max(k, 1)))
    for i in range(0, len(a_all), step):
        a = a_all[i:i + step][None, :, :]
        ab = b_all[i:i + step][None, :, :] - a
        ap = points[:, None, :] - a
        denom = np.einsum("kij,kij->ki", ab, ab)
        denom[denom == 0.0] = 1.0
        s = np.clip(np.einsum("kij,kij->ki", ap, ab) / denom, 0.0, 1.0)
        diff = ap - s[:, :, None] * ab
        d = np.sqrt(np.einsum("kij,kij->ki", diff, diff)).min(axis=1)
        best = np.minimum(best, d)
    return best


def _batch_winding(poly: np.ndarray, points: np.ndarray,
                   tau_on: float = 1e-9) -> np.ndarray | None:
    """Winding numbers of a closed polyline around many points.

    Returns None when some point sits within tau_on of the polyline or a
    residual is non-integer.
    """
    z = poly[:, 0] + 1j * poly[:, 1]
    w = points[:, 0] + 1j * points[:, 1]
    total = np.zeros(len(points))
    step = max(1, int(2_000_000 // max(len(points), 1)))
    zn = np.roll(z, -1)
    for i in range(0, len(z), step):
        num = zn[i:i + step][None, :] - w[:, None]
        den = z[i:i + step][None, :] - w[:, None]
        if np.min(np.abs(den)) < tau_on:
            return None
        total += np.angle(num / den).sum(axis=1)
    turns = total / (2.0 * np.pi)
    rounded = np.rint(turns)
    if np.max(np.abs(turns - rounded)) > 1e-6:
        return None
    return rounded.astype(int)


def _refine_min(f, lo: float, hi: float, rounds: int = 10, k: int = 33):
    """Argmin of a scalar function on [lo, hi] by iterated grid shrinking."""
    for _ in range(rounds):
        t = np.linspace(lo, hi, k)
        v = f(t)
        j = int(np.argmin(v))
        lo = t[max(j - 1, 0)]
        hi = t[min(j + 1, k - 1)]
        if hi - lo < 1e-14:
            break
    t = np.linspace(lo, hi, k)
    v = f(t)
    j = int(np.argmin(v))
    return float(t[j]), float(v[j])


# ---------------------------------------------------------------------------
# collar frame
# ---------------------------------------------------------------------------


@dataclass
class _Frame:
    delta: float
    boundary: np.ndarray  # refined image of the circle |x| = 1 + delta
    y_lens: float  # half-opening of the lens tip at x = 1
    x_lens: float  # overshoot of the lens tip past x = 1
    clearance: float  # overshoot of the image past x = 0 on the left
    y_max: float = field(default=0.0)


_FRAME_CACHE: dict = {}


def _measure_frame(m: PlanarMap, delta: float) -> _Frame:
    key = (id(m), float(delta))
    hit = _FRAME_CACHE.get(key)
    if hit is not None:
        return hit

    def ring(theta):
        r = 1.0 + delta
        return m.eval_many(
            np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        )

    gap = max(3.0 * delta * delta, 1e-12)
    _, img = _adaptive_image(ring, -np.pi, np.pi, 4096, gap, max_pts=100000)
    x, y = img[:, 0], img[:, 1]
    x_lens = float(np.max(x) - 1.0)
    clearance = float(-np.min(x))
    y_max = float(np.max(np.abs(y)))
    # lens half-opening: interpolate |y| where the boundary crosses x = 1
    s = x - 1.0
    flip = np.nonzero(s[:-1] * s[1:] < 0.0)[0]
    if len(flip) == 0 or x_lens <= 0.0 or clearance <= 0.0:
        raise _Shrink("collar image has no lens tip at this width")
    w = s[flip] / (s[flip] - s[flip + 1])
    y_at = np.abs(y[flip] * (1.0 - w) + y[flip + 1] * w)
    y_lens = float(np.max(y_at))
    if y_lens <= 0.0:
        raise _Shrink("degenerate lens opening")
    frame = _Frame(delta, img, y_lens, x_lens, clearance, y_max)
    if len(_FRAME_CACHE) > 64:
        _FRAME_CACHE.clear()
    _FRAME_CACHE[key] = frame
    return frame


# ---------------------------------------------------------------------------
# curve decomposition at a collar width
# ---------------------------------------------------------------------------


@dataclass
class _Decomposition:
    delta: float
    frame: _Frame
    inner: np.ndarray  # 2N params on |x| = 1, sorted
    outer: np.ndarray  # 2N params on |x| = 1 + delta, interleaved
    angles: np.ndarray  # angle of gamma at each inner crossing
    sigma: np.ndarray  # cut coordinate mod(theta - pi, 2 pi)
    rank: np.ndarray  # rank of each crossing point by sigma
    depth: np.ndarray  # nesting depth per excursion
    nested_pairs: list  # (outer excursion, inner excursion) indices
    dev_collar: float  # max |u o gamma - (1,0)| over the collar windows


def _chord_structure(sigma: np.ndarray):
    """Depths and nested pairs of the chord family; rejects interleaving."""
    n2 = len(sigma)
    n = n2 // 2
    chords = [
        (min(sigma[2 * i], sigma[2 * i + 1]), max(sigma[2 * i], sigma[2 * i + 1]))
        for i in range(n)
    ]
    depth = np.zeros(n, dtype=int)
    nested = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            lo_i, hi_i = chords[i]
            lo_j, hi_j = chords[j]
            if lo_j < lo_i and hi_i < hi_j:
                depth[i] += 1
                nested.append((j, i))
            elif not (hi_i < lo_j or hi_j < lo_i or (lo_i < lo_j and hi_j < hi_i)):
                raise GridInjectError(
                    "nesting-anomaly",
                    "excursion chords interleave; the curve cannot be injective",
                    chord_a=list(chords[i]),
                    chord_b=list(chords[j]),
                )
    return depth, sorted(set(nested))


def _decompose(m: PlanarMap, curve: ParamCurve, delta: float, eps: float,
               n_dense: int) -> _Decomposition:
    inner = _radius_crossings(curve, 1.0, n_dense)
    if len(inner) % 2 == 1:
        raise GridInjectError(
            "non-transversal-curve",
            "odd number of unit-circle crossings; a crossing is tangential",
            crossings=inner.tolist(),
        )
    if len(inner) == 0:
        t = _param_grid(curve, n_dense)
        if np.min(curve.radius(t)) <= 1.0 + 1e-9:
            raise GridInjectError(
                "non-transversal-curve",
                "the curve grazes the unit circle without crossing it",
            )
        empty = _Frame(delta, np.zeros((0, 2)), 0.0, 0.0, 0.0, 0.0)
        return _Decomposition(
            delta, empty, inner, inner, np.empty(0), np.empty(0),
            np.empty(0, dtype=int), np.empty(0, dtype=int), [], 0.0,
        )

    if delta * delta / 4096.0 < _EPS_FLOOR:
        raise GridInjectError(
            "epsilon-too-small-for-resolution",
            "the staple height underflows double precision at every "
            "admissible collar width",
            delta=delta,
        )

    frame = _measure_frame(m, delta)
    if frame.x_lens + frame.y_lens > 0.25 * eps:
        raise _Shrink("collar image exceeds the deviation budget")

    outer = _radius_crossings(curve, 1.0 + delta, n_dense)
    if len(outer) != len(inner):
        raise _Shrink("collar circle crossing count differs from the unit circle")
    for i in range(0, len(inner), 2):
        if not (outer[i] < inner[i] < inner[i + 1] < outer[i + 1]):
            raise _Shrink("collar crossings do not bracket the excursion")

    # the curve must start outside: the first crossing is an entry
    mid0 = 0.5 * outer[0]
    if curve.radius(np.array([mid0]))[0] <= 1.0 + delta:
        raise _Shrink("curve starts inside the collar")

    # deviation of u o gamma from (1, 0) over the collar windows
    dev = 0.0
    for i in range(0, len(inner), 2):
        for lo, hi in ((outer[i], inner[i]), (inner[i + 1], outer[i + 1])):
            t = np.linspace(lo, hi, 256)
            img = m.eval_many(curve.eval(t))
            dev = max(dev, float(np.max(np.linalg.norm(img - _ONE, axis=1))))
    if dev > eps / 3.0:
        raise _Shrink("collar window image strays from the lens tip")

    pts = curve.eval(inner)
    angles = np.arctan2(pts[:, 1], pts[:, 0])
    sigma = np.mod(angles - np.pi, 2.0 * np.pi)
    order = np.argsort(sigma)
    rank = np.empty(len(sigma), dtype=int)
    rank[order] = np.arange(len(sigma))
    if np.min(np.diff(np.sort(sigma))) < 1e-12:
        raise GridInjectError(
            "nesting-anomaly",
            "two crossing points share a cut coordinate",
            sigma=np.sort(sigma).tolist(),
        )
    depth, nested_pairs = _chord_structure(sigma)
    return _Decomposition(
        delta, frame, inner, outer, angles, sigma, rank, depth, nested_pairs, dev
    )


# ---------------------------------------------------------------------------
# staples
# ---------------------------------------------------------------------------


@dataclass
class _Staple:
    index: int
    a: float
    b: float
    c: float  # param of the deepest point
    ell: float  # min of u_1 along the excursion
    ell_tilde: float  # bridge abscissa, nesting-adjusted
    d3: float  # param half-width of the turnaround window
    y_a: float
    y_b: float


def _excursion_minimum(m: PlanarMap, curve: ParamCurve, a: float, b: float):
    def u1(t):
        return m.eval_many(curve.eval(t))[:, 0]

    t = np.union1d(
        np.linspace(a, b, 4097),
        curve.params[(curve.params > a) & (curve.params < b)],
    )
    v = u1(t)
    j = int(np.argmin(v))
    lo = t[max(j - 1, 0)]
    hi = t[min(j + 1, len(t) - 1)]
    return _refine_min(lambda s: u1(s), lo, hi)


def _build_staples(m: PlanarMap, curve: ParamCurve, dec: _Decomposition,
                   y_levels: np.ndarray, d2: float) -> list[_Staple]:
    n = len(dec.inner) // 2
    depth = dec.depth
    dmax = int(depth.max()) if n else 0
    staples = []
    for i in range(n):
        a, b = dec.inner[2 * i], dec.inner[2 * i + 1]
        c, ell = _excursion_minimum(m, curve, a, b)
        adjust = 0.9 * d2 * (dmax - depth[i] + 1) / (dmax + 2)
        tiebreak = i * 0.001 * d2 / (2 * n + 2)
        ell_tilde = ell - adjust + tiebreak
        d3 = min((b - a) / 64.0, d2 / 8.0)
        floor = 1e-13 * (b - a)

        def window_ok(h):
            if not (a < c - 2 * h and c + 2 * h < b):
                return False
            t = np.linspace(c - 2 * h, c + 2 * h, 65)
            u1 = m.eval_many(curve.eval(t))[:, 0]
            return float(np.max(u1)) <= ell_tilde + 0.95 * d2

        for _ in range(80):
            if window_ok(d3):
                break
            d3 *= 0.5
            if d3 < floor:
                raise GridInjectError(
                    "degenerate-segment",
                    "cannot isolate the turnaround of an excursion",
                    excursion=i, param=c,
                )
        staples.append(
            _Staple(
                i, a, b, c, ell, ell_tilde, d3,
                float(y_levels[dec.rank[2 * i]]),
                float(y_levels[dec.rank[2 * i + 1]]),
            )
        )
    tildes = sorted(s.ell_tilde for s in staples)
    if any(t2 - t1 <= 0.0 for t1, t2 in zip(tildes, tildes[1:])):
        raise GridInjectError(
            "degenerate-configuration", "bridge abscissas collide", values=tildes
        )
    for s in staples:
        if abs(s.y_a - s.y_b) <= 4.0 * d2:
            raise GridInjectError(
                "degenerate-configuration",
                "staple heights too close for a monotone bridge",
                excursion=s.index,
            )
    return staples


def _staple_pieces(m: PlanarMap, curve: ParamCurve, s: _Staple, d2: float,
                   max_gap: float):
    """Image-space pieces of one staple, as (params, vertices) blocks."""

    def drift(t_lo, t_hi, y_lo, y_hi):
        def ev(t):
            u1 = m.eval_many(curve.eval(t))[:, 0]
            y = y_lo + (y_hi - y_lo) * (t - t_lo) / (t_hi - t_lo)
            return np.column_stack([u1, y])

        return _adaptive_image(ev, t_lo, t_hi, 65, max_gap, max_pts=4096)

    sign = 1.0 if s.y_a > s.y_b else -1.0
    ya1, ya2 = s.y_a - sign * d2, s.y_a - sign * 2.0 * d2
    yb2, yb1 = s.y_b + sign * 2.0 * d2, s.y_b + sign * d2
    tl, tr = s.c - 2.0 * s.d3, s.c + 2.0 * s.d3
    ti, tj = s.c - s.d3, s.c + s.d3
    u_l = float(m.eval_one(curve.eval(tl)[0])[0])
    u_r = float(m.eval_one(curve.eval(tr)[0])[0])

    blocks = []
    blocks.append(drift(s.a, tl, s.y_a, ya1))
    blocks.append((np.array([tl, ti]), np.array([[u_l, ya1], [s.ell_tilde, ya2]])))
    blocks.append((np.array([ti, tj]), np.array([[s.ell_tilde, ya2], [s.ell_tilde, yb2]])))
    blocks.append((np.array([tj, tr]), np.array([[s.ell_tilde, yb2], [u_r, yb1]])))
    blocks.append(drift(tr, s.b, yb1, s.y_b))
    return blocks


# ---------------------------------------------------------------------------
# connectors
# ---------------------------------------------------------------------------


@dataclass
class _Connector:
    point: int  # crossing point index along the curve (0 .. 2N-1)
    rank: int
    theta_a: float  # angle of the spoke anchored at the collar crossing
    theta_e: float  # angle of the spoke that exits toward the lens tip
    xi: float
    y_hat: float
    y_tilde: float
    m_exit: float  # radius offset of the lens-tip preimage
    rho: float = 0.0  # arc radius offset, assigned by the scheduler
    entry: np.ndarray = field(default=None)  # E_k in the image plane
    anchor: np.ndarray = field(default=None)  # gamma at the collar crossing


def _plan_connectors(dec: _Decomposition, y_levels: np.ndarray,
                     curve: ParamCurve) -> list[_Connector]:
    n2 = len(dec.inner)
    frame = dec.frame
    delta = dec.delta
    cons = []
    for p in range(n2):
        r = int(dec.rank[p])
        # entry points fan out from the lens tip; the slope of the ray to
        # E_k grows with its reach xi, so longer exit spokes pass outside
        # shorter vertical drops.  The sign keeps each entry in the same
        # half-plane as its crossing, so collar arcs never sweep through
        # the axis; sigma-ranking makes the two half fans height-disjoint.
        # Within a fan, a vertical drop spans the heights between its hop
        # level and its entry, so the reach must shrink toward the axis:
        # descending in rank for the upper fan, ascending for the lower.
        half = -1.0 if dec.sigma[p] < np.pi else 1.0
        w = (n2 - r) / n2 if half > 0 else (r + 1.0) / n2
        xi = frame.x_lens * (0.2 + 0.4 * w)
        y_hat = half * 0.5 * frame.y_lens * (xi / frame.x_lens) ** 2
        entry = np.array([1.0 + xi, y_hat])
        src = counterexample_inverse(entry[None, :])[0]
        m_exit = float(np.linalg.norm(src)) - 1.0
        if m_exit >= (1.0 - 1.0 / 32.0) * delta:
            raise _Shrink("lens-tip preimage sits too close to the collar rim")
        if m_exit <= 0.0:
            raise _Shrink("lens-tip preimage fell inside the unit circle")
        theta_e = float(np.arctan2(src[1], src[0]))
        anchor = curve.eval(dec.outer[p])[0]
        theta_a = float(np.arctan2(anchor[1], anchor[0]))
        cons.append(
            _Connector(
                p, r, theta_a, theta_e, float(xi), float(y_hat),
                float(y_levels[r]), m_exit, entry=entry, anchor=anchor,
            )
        )
    # lens containment of every entry point, with margin
    entries = np.array([c.entry for c in cons])
    if np.min(_batch_polyline_distance(entries, frame.boundary)) <= frame.y_lens / 8.0:
        raise _Shrink("lens entry point too close to the collar image")
    winds = _batch_winding(frame.boundary, entries)
    if winds is None or np.any(winds == 0):
        raise _Shrink("lens entry point escaped the collar image")

    # schedule arc radii: lower arcs must not be pierced by foreign spokes
    n = len(cons)
    m_min = min(c.m_exit for c in cons)
    # cap the arc band at half the smallest exit offset: the image of an
    # arc at radius offset rho ends a factor (rho / m_exit)^2 short of its
    # exit abscissa, so rho <= m_exit / 2 keeps every arc strictly left of
    # every vertical drop of the entry fan
    lo = delta / 8.0
    hi = min(0.5 * m_min, 7.0 * delta / 8.0)
    if hi <= lo:
        lo, hi = 0.2 * m_min, 0.5 * m_min
    intervals = [
        (min(c.theta_a, c.theta_e), max(c.theta_a, c.theta_e)) for c in cons
    ]
    below = [[False] * n for _ in range(n)]  # below[j][k]: rho_j < rho_k required
    for j in range(n):
        lo_j, hi_j = intervals[j]
        for k in range(n):
            if j == k:
                continue
            if lo_j < cons[k].theta_a < hi_j or lo_j < cons[k].theta_e < hi_j:
                below[j][k] = True
    indeg = [sum(below[j][k] for j in range(n)) for k in range(n)]
    order, ready = [], [k for k in range(n) if indeg[k] == 0]
    work = [row[:] for row in below]
    while ready:
        ready.sort()
        j = ready.pop(0)
        order.append(j)
        for k in range(n):
            if work[j][k]:
                work[j][k] = False
                indeg[k] -= 1
                if indeg[k] == 0:
                    ready.append(k)
    mode = "topological"
    if len(order) != n:  # a cycle: fall back to shortest-arc-lowest
        order = sorted(range(n), key=lambda j: intervals[j][1] - intervals[j][0])
        mode = "arc-length"
    for pos, j in enumerate(order):
        cons[j].rho = lo + (pos + 1) * (hi - lo) / (n + 1)
    return cons, mode


def _connector_pieces(m: PlanarMap, con: _Connector, delta: float,
                      max_gap: float, a_side: bool = True):
    """Image pieces of one connector, ordered from the collar crossing in."""

    def radial(theta, m_lo, m_hi):
        def ev(s):
            r = 1.0 + m_lo + s * (m_hi - m_lo)
            return m.eval_many(np.column_stack([r * np.cos(theta * np.ones_like(s)),
                                                r * np.sin(theta * np.ones_like(s))]))
        return _adaptive_image(ev, 0.0, 1.0, 33, max_gap, max_pts=4096)[1]

    def arc(rho, th_lo, th_hi):
        def ev(s):
            th = th_lo + s * (th_hi - th_lo)
            r = 1.0 + rho
            return m.eval_many(np.column_stack([r * np.cos(th), r * np.sin(th)]))
        return _adaptive_image(ev, 0.0, 1.0, 65, max_gap, max_pts=8192)[1]

    spoke_a = radial(con.theta_a, delta, con.rho)
    spoke_a[0] = m.eval_one(con.anchor)
    sweep = arc(con.rho, con.theta_a, con.theta_e)
    spoke_e = radial(con.theta_e, con.rho, con.m_exit)
    spoke_e[-1] = con.entry
    drop = np.array([con.entry, [1.0 + con.xi, con.y_tilde]])
    hop = np.array([[1.0 + con.xi, con.y_tilde], [1.0, con.y_tilde]])
    pieces = [spoke_a, sweep, spoke_e, drop, hop]
    fractions = [0.30, 0.40, 0.15, 0.075, 0.075]
    if not a_side:
        pieces = [p[::-1] for p in pieces[::-1]]
        fractions = fractions[::-1]
    return pieces, fractions


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def _spread_params(t_lo: float, t_hi: float, pieces, fractions):
    """Params for connector pieces: each piece gets a slot of the window,
    filled proportionally to its own accumulated arc length."""
    out = []
    edges = np.concatenate([[0.0], np.cumsum(fractions)])
    edges /= edges[-1]
    for piece, e0, e1 in zip(pieces, edges[:-1], edges[1:]):
        seg = np.linalg.norm(np.diff(piece, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        s = s / s[-1] if s[-1] > 0 else np.linspace(0.0, 1.0, len(piece))
        lo = t_lo + e0 * (t_hi - t_lo)
        hi = t_lo + e1 * (t_hi - t_lo)
        out.append((lo + s * (hi - lo), piece))
    return out


def _concat_blocks(blocks):
    params, verts = [], []
    for t, p in blocks:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if params and abs(t[0] - params[-1][-1]) < 1e-15:
            t, p = t[1:], p[1:]
        if len(t):
            params.append(t)
            verts.append(p)
    t = np.concatenate(params)
    v = np.vstack(verts)
    # drop exactly duplicated consecutive vertices (zero-length edges)
    seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 0.0])
    t, v = t[keep], v[keep]
    t = np.maximum.accumulate(t)
    return t, v


def _kept_block(m: PlanarMap, curve: ParamCurve, t_lo: float, t_hi: float,
                max_gap: float):
    def ev(t):
        return m.eval_many(curve.eval(t))

    n0 = max(33, int(np.ceil(1024 * (t_hi - t_lo))) + 1)
    return _adaptive_image(ev, t_lo, t_hi, n0, max_gap)


def _build_phi(m: PlanarMap, curve: ParamCurve, dec: _Decomposition,
               staples: list[_Staple], cons: list[_Connector], d1: float,
               eps: float):
    delta = dec.delta
    max_gap = eps / 16.0
    blocks = []
    n = len(staples)

    # build each connector once, screening its collar pieces for image
    # deviation and for clearance over the staple band
    zone = 4.0 * d1
    cache = {}
    for con in cons:
        pieces, fr = _connector_pieces(m, con, delta, max_gap, a_side=True)
        cache[con.point] = (pieces, fr)
        for piece in pieces[:3]:
            dev = np.max(np.linalg.norm(piece - _ONE, axis=1))
            if dev > 0.5 * eps:
                raise _Shrink("collar detour image strays from the lens tip")
            inside = piece[:, 0] < 1.0 - 1e-12
            if inside.any() and np.min(np.abs(piece[inside, 1])) <= zone:
                raise _Shrink("collar detour image grazes the staple band")

    t_prev = 0.0
    for i in range(n):
        s = staples[i]
        blocks.append(_kept_block(m, curve, t_prev, dec.outer[2 * i], max_gap))
        pieces, fr = cache[2 * i]
        blocks.extend(_spread_params(dec.outer[2 * i], s.a, pieces, fr))
        blocks.extend(_staple_pieces(m, curve, s, _d2_of(d1, len(cons)), max_gap))
        pieces, fr = cache[2 * i + 1]
        pieces = [p[::-1] for p in pieces[::-1]]
        blocks.extend(_spread_params(s.b, dec.outer[2 * i + 1], pieces, fr[::-1]))
        t_prev = dec.outer[2 * i + 1]
    blocks.append(_kept_block(m, curve, t_prev, 1.0, max_gap))
    return _concat_blocks(blocks)


def _d2_of(d1: float, n2: int) -> float:
    step = 2.0 * d1 / (n2 + 1)
    return min(d1 / 8.0, step / 8.0)


def _containment_ok(frame: _Frame, d1: float, d2: float) -> bool:
    """The staple band, inflated, must sit inside the collar image."""
    h = d1 + 2.0 * d2
    x0, x1 = -2.0 * d2, 1.0
    xs = np.linspace(x0, x1, 24)
    ys = np.linspace(-h, h, 8)
    top = np.column_stack([xs, np.full_like(xs, h)])
    bot = np.column_stack([xs, np.full_like(xs, -h)])
    lef = np.column_stack([np.full_like(ys, x0), ys])
    rig = np.column_stack([np.full_like(ys, x1), ys])
    pts = np.vstack([top, bot, lef, rig])
    if np.min(_batch_polyline_distance(pts, frame.boundary)) <= d1:
        return False
    winds = _batch_winding(frame.boundary, pts)
    return winds is not None and not np.any(winds == 0)


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def _as_curve(curve) -> ParamCurve:
    if isinstance(curve, ParamCurve):
        return curve
    if isinstance(curve, dict):
        if curve.get("closed", False):
            raise GridInjectError(
                "schema-error", "witness construction needs an open curve"
            )
        return ParamCurve(curve.get("vertices"))
    return ParamCurve(curve)


def _check_preconditions(curve: ParamCurve):
    r_ends = np.linalg.norm(curve.vertices[[0, -1]], axis=1)
    if np.any(r_ends < 2.0 - 1e-9):
        raise GridInjectError(
            "schema-error",
            "curve endpoints must lie on the circle of radius 2",
            radii=r_ends.tolist(),
        )
    if np.any(np.linalg.norm(curve.vertices, axis=1) > 2.0 + 1e-9):
        raise GridInjectError(
            "schema-error", "curve leaves the disk of radius 2"
        )
    if point_polyline_distance(_P, curve.vertices) < _MIN_P_DIST:
        raise GridInjectError(
            "curve-hits-P",
            "curve passes too close to the boundary discontinuity",
            distance=float(point_polyline_distance(_P, curve.vertices)),
            minimum=_MIN_P_DIST,
        )
    hits = polyline_self_intersections(curve.vertices)
    if hits:
        raise GridInjectError(
            "schema-error", "input curve intersects itself", first=hits[0]
        )


def build_witness(curve, eps: float, tol: Tolerances | None = None,
                  m: PlanarMap | None = None) -> dict:
    """Build an injective polyline phi within eps of u o gamma.

    Returns a dict with the normalized curve, phi as params plus
    vertices, the construction plan, and a verification report.  Raises
    a ``GridInjectError`` when the curve violates a precondition or the
    construction cannot be completed at this eps.
    """
    tol = tol or Tolerances()
    eps = float(eps)
    if not np.isfinite(eps) or eps <= 0.0:
        raise GridInjectError("schema-error", "eps must be positive", eps=eps)
    curve = _as_curve(curve)
    _check_preconditions(curve)
    if m is None:
        m = map_from_descriptor({"kind": "counterexample", "params": {}})
    n_dense = max(4 * len(curve.vertices), int(tol["witness.n_samples"]), 4096)

    delta = 0.9 * min(eps / 8.0, 0.3)
    last_reason = "no attempt"
    for _ in range(24):
        try:
            dec = _decompose(m, curve, delta, eps, n_dense)
        except _Shrink as sh:
            last_reason = sh.reason
            delta *= 0.5
            continue

        if len(dec.inner) == 0:
            # the curve never enters the unit disk: u o gamma is already
            # injective and serves as its own witness
            t, v = _kept_block(m, curve, 0.0, 1.0, eps / 16.0)
            return _finish(curve, eps, t, v, dec, [], [], 0.0, 0.0, "direct", tol, m)

        n2 = len(dec.inner)
        d1 = min(delta / 8.0, dec.frame.y_lens / 64.0, delta * delta / 4096.0)
        if d1 < _EPS_FLOOR:
            raise GridInjectError(
                "epsilon-too-small-for-resolution",
                "the staple height underflows double precision",
                eps=eps, delta=delta, height=d1,
            )
        for _ in range(20):
            if _containment_ok(dec.frame, d1, _d2_of(d1, n2)):
                break
            d1 *= 0.5
            if d1 < _EPS_FLOOR:
                raise GridInjectError(
                    "epsilon-too-small-for-resolution",
                    "no representable staple height fits the collar image",
                    eps=eps, delta=delta,
                )
        try:
            sweep_ok = False
            for _retry in range(4):
                d2 = _d2_of(d1, n2)
                levels = d1 * (2.0 * (np.arange(n2) + 1.0) / (n2 + 1.0) - 1.0)
                cons, mode = _plan_connectors(dec, levels, curve)
                staples = _build_staples(m, curve, dec, levels, d2)
                t, v = _build_phi(m, curve, dec, staples, cons, d1, eps)
                if not polyline_self_intersections(v):
                    sweep_ok = True
                    break
                d1 *= 0.5
                if d1 < _EPS_FLOOR:
                    break
            if not sweep_ok:
                raise GridInjectError(
                    "connector-collision",
                    "detour pieces intersect after retries",
                    delta=delta, height=d1,
                )
        except _Shrink as sh:
            last_reason = sh.reason
            delta *= 0.5
            continue
        return _finish(curve, eps, t, v, dec, staples, cons, d1, d2, mode, tol, m)

    raise GridInjectError(
        "non-transversal-curve",
        "no collar width fits the curve; a crossing is tangential or the "
        "curve hugs the unit circle",
        last=last_reason,
    )


def _finish(curve, eps, t, v, dec, staples, cons, d1, d2, mode, tol, m):
    witness = {
        "curve": curve.to_dict(),
        "eps": eps,
        "phi": {"params": t.tolist(), "vertices": v.tolist()},
        "plan": {
            "delta": dec.delta,
            "staple_height": d1,
            "staple_margin": d2,
            "n_excursions": len(staples),
            "order_mode": mode,
            "frame": {
                "y_lens": dec.frame.y_lens,
                "x_lens": dec.frame.x_lens,
                "clearance": dec.frame.clearance,
                "y_max": dec.frame.y_max,
            },
            "collar_deviation": dec.dev_collar,
            "crossings": [
                {
                    "param": float(dec.inner[p]),
                    "window_param": float(dec.outer[p]),
                    "angle": float(dec.angles[p]),
                    "sigma": float(dec.sigma[p]),
                    "rank": int(dec.rank[p]),
                }
                for p in range(len(dec.inner))
            ],
            "excursions": [
                {
                    "a": s.a, "b": s.b, "turnaround": s.c,
                    "depth": int(dec.depth[s.index]),
                    "ell": s.ell, "ell_tilde": s.ell_tilde,
                    "window_half_width": s.d3,
                    "heights": [s.y_a, s.y_b],
                }
                for s in staples
            ],
            "nested_pairs": [list(p) for p in dec.nested_pairs],
            "connectors": [
                {
                    "point": c.point, "rank": c.rank,
                    "xi": c.xi, "y_hat": c.y_hat, "y_tilde": c.y_tilde,
                    "rho": c.rho, "m_exit": c.m_exit,
                    "theta_anchor": c.theta_a, "theta_exit": c.theta_e,
                }
                for c in cons
            ],
        },
    }
    witness["report"] = verify_witness(witness, tol=tol, m=m)
    return witness


def verify_witness(witness: dict, tol: Tolerances | None = None,
                   m: PlanarMap | None = None) -> dict:
    """Check injectivity and the sup-deviation of a witness polyline."""
    tol = tol or Tolerances()
    if m is None:
        m = map_from_descriptor({"kind": "counterexample", "params": {}})
    curve = ParamCurve(witness["curve"]["vertices"])
    eps = float(witness["eps"])
    t = np.asarray(witness["phi"]["params"], dtype=float)
    v = np.asarray(witness["phi"]["vertices"], dtype=float)
    hits = polyline_self_intersections(v)

    n_samples = int(tol["witness.n_samples"])
    ts = np.linspace(0.0, 1.0, n_samples)
    phi = np.column_stack([np.interp(ts, t, v[:, 0]), np.interp(ts, t, v[:, 1])])
    target = m.eval_many(curve.eval(ts))
    dev = np.linalg.norm(phi - target, axis=1)
    k = int(np.argmax(dev))
    end_err = max(
        float(np.linalg.norm(v[0] - m.eval_one(curve.eval(0.0)[0]))),
        float(np.linalg.norm(v[-1] - m.eval_one(curve.eval(1.0)[0]))),
    )
    return {
        "injective": not hits,
        "violations": hits[:4],
        "eps": eps,
        "deviation": float(dev[k]),
        "deviation_at": float(ts[k]),
        "endpoint_error": end_err,
        "n_samples": n_samples,
        "n_vertices": int(len(v)),
        "ok": (not hits) and float(dev[k]) < eps and end_err < 1e-9,
    }
