"""Planar map fixtures, evaluation, Jacobians, and descriptors.

A :class:`PlanarMap` bundles a vectorized evaluator over a square or disk
domain with optional analytic Jacobians, a list of declared
discontinuities, and a JSON descriptor round-trip.  The catalogue:

``identity``, ``affine``
    The obvious ones; ``affine`` takes a matrix and an offset.

``shear``
    A boundary-fixing horizontal shear of the unit square,
    ``(x, y) -> (x + k sin(pi x) 2y(1-y), y)``.  The taper keeps it equal
    to the identity on the whole boundary while still moving the middle
    line by ``k/2 * sin(pi x)``; the Jacobian determinant stays positive
    for ``|k| < 2/pi``.

``twist``
    A compactly supported rotation about a center: points at radius ``r``
    rotate by ``A (1 + cos(pi r / r0)) / 2`` for ``r < r0`` and stay put
    outside.  Area preserving, identity on the square boundary whenever
    the support disk fits inside.

``cavitation``
    On a disk of radius ``R``: ``r -> sqrt(a^2 + (1 - (a/R)^2) r^2)``
    radially, opening a hole of radius ``a`` at the center (the single
    declared discontinuity) while fixing the outer circle.

``counterexample``
    The circle-collapsing map on the disk of radius 2.  It sends the
    closed unit disk onto the segment S = [0,1] x {0}: the inner disk of
    radius 1/2 via ``(1 - 2|x|, 0)``, the annulus via a clamped angular
    profile, and the unit circle (minus the discontinuity P = (-1, 0))
    to the single point (1, 0).  Outside the unit disk it is a
    diffeomorphism onto B_2 minus S, equal to the identity on |x| = 2,
    built from a rescaled Joukowski frame; see the frame functions below.
    An explicit inverse of the outer part is provided.

``composition``
    Maps applied in sequence (first listed is applied first).

Descriptors are plain dicts ``{"kind", "params", "domain"}`` with exact
field names covered by round-trip tests; see SCHEMAS.md at the repo root.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridInjectError
from .tolerances import DEFAULTS

__all__ = [
    "Domain",
    "PlanarMap",
    "map_from_descriptor",
    "map_to_descriptor",
    "jacobian",
    "finite_difference_jacobian",
    "local_affine_deviation",
    "image_of_circle",
    "counterexample_inverse",
    "MAP_KINDS",
]

_CE_CENTER = 0.5 + 0.0j  # midpoint of the collapsed segment, as a complex number


# ---------------------------------------------------------------------------
# Joukowski frame for the outer diffeomorphism of the counterexample map.
#
# J(w) = (w + 1/w) / 4 maps {|w| > 1} conformally onto the complement of
# the segment [-1/2, 1/2] x {0}; shifting by c = 1/2 turns that segment
# into S = [0, 1] x {0}.  For each boundary angle theta, Lambda(theta) is
# the w-plane point whose image is the target boundary point 2 e^{i theta},
# alpha(theta) its argument (a monotone bijection of [0, pi] onto itself),
# and rho_Lambda(psi) the radial profile of the Lambda curve at argument
# psi.  The outer map interpolates between the unit circle (collapsing to
# (1,0)) and the Lambda curve (the identity on |x| = 2) with the gather
# g(t, m) = m t / (1 + (m - 1) t), which is the identity at m = 1 and
# pushes all angles toward 0 as m -> 0.
# ---------------------------------------------------------------------------


def _J(w: np.ndarray) -> np.ndarray:
    return (w + 1.0 / w) / 4.0


def _J_inv(zeta: np.ndarray) -> np.ndarray:
    """Branch of J^{-1} with |w| >= 1 (the two roots have product 1)."""
    zeta = np.asarray(zeta, dtype=complex)
    s = np.sqrt(4.0 * zeta * zeta - 1.0)
    w_plus = 2.0 * zeta + s
    w_minus = 2.0 * zeta - s
    return np.where(np.abs(w_plus) >= np.abs(w_minus), w_plus, w_minus)


def _Lambda(theta: np.ndarray) -> np.ndarray:
    """w-plane preimage of the outer boundary point 2 e^{i theta}."""
    theta = np.asarray(theta, dtype=float)
    return _J_inv(2.0 * np.exp(1j * theta) - _CE_CENTER)


def _alpha(theta_abs: np.ndarray) -> np.ndarray:
    """arg Lambda on [0, pi]; monotone, alpha(0) = 0, alpha(pi) = pi."""
    return np.angle(_Lambda(theta_abs))


def _alpha_inv(psi_abs: np.ndarray) -> np.ndarray:
    """Bisection inverse of alpha on [0, pi], vectorized."""
    psi = np.asarray(psi_abs, dtype=float)
    lo = np.zeros_like(psi)
    hi = np.full_like(psi, np.pi)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        below = _alpha(mid) < psi
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def _rho_Lambda(psi_abs: np.ndarray) -> np.ndarray:
    return np.abs(_Lambda(_alpha_inv(psi_abs)))


def _gather(t: np.ndarray, m: np.ndarray) -> np.ndarray:
    """g(t, m) = m t / (1 + (m-1) t): angle gather toward 0 as m -> 0."""
    t = np.asarray(t, dtype=float)
    m = np.asarray(m, dtype=float)
    den = 1.0 + (m - 1.0) * t
    return np.divide(m * t, den, out=np.zeros_like(den), where=den != 0.0)


def _counterexample_eval(pts: np.ndarray, tau_disc: float) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    z = pts[:, 0] + 1j * pts[:, 1]
    r = np.abs(z)
    if np.any(r > 2.0 + 1e-9):
        k = int(np.argmax(r))
        raise GridInjectError(
            "out-of-domain", "point outside the disk of radius 2", point=pts[k], radius=r[k]
        )
    near_p = np.abs(z + 1.0) < tau_disc
    if np.any(near_p):
        k = int(np.argmax(near_p))
        raise GridInjectError(
            "undefined-at-point",
            "the map has no value at its discontinuity (-1, 0)",
            point=pts[k],
        )
    out = np.zeros((len(z), 2))
    inner = r <= 0.5
    out[inner, 0] = 1.0 - 2.0 * r[inner]

    ann = (r > 0.5) & (r < 1.0)
    if np.any(ann):
        eps = 1.0 - r[ann]
        frac = (np.pi - np.abs(np.angle(z[ann]))) / (2.0 * np.pi * eps)
        out[ann, 0] = (1.0 - 2.0 * eps) * np.minimum(frac, 1.0)

    outer = r >= 1.0
    if np.any(outer):
        zo = z[outer]
        m = np.minimum(np.abs(zo) - 1.0, 1.0)
        theta = np.angle(zo)
        t = _alpha(np.abs(theta)) / np.pi
        psi = np.pi * _gather(t, m)
        rho = 1.0 + m * (_rho_Lambda(psi) - 1.0)
        w = rho * np.exp(1j * np.sign(theta) * psi)
        u = _CE_CENTER + _J(w)
        out[outer, 0] = u.real
        out[outer, 1] = u.imag
    return out


def counterexample_inverse(pts) -> np.ndarray:
    """Inverse of the outer diffeomorphism, defined off the segment S.

    Accepts image points in B_2 outside the collapsed segment, returns the
    unique source points with 1 < |x| <= 2.  Points whose Joukowski
    preimage lands on the unit circle (that is, points of S itself) or
    whose collar parameter falls outside (0, 1] raise ``out-of-domain``.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    zeta = (pts[:, 0] + 1j * pts[:, 1]) - _CE_CENTER
    w = _J_inv(zeta)
    rho = np.abs(w)
    if np.any(rho <= 1.0 + 1e-13):
        k = int(np.argmin(rho))
        raise GridInjectError(
            "out-of-domain",
            "image point lies on the collapsed segment",
            point=pts[k],
        )
    psi = np.angle(w)
    rho_l = _rho_Lambda(np.abs(psi))
    m = (rho - 1.0) / (rho_l - 1.0)
    if np.any(m > 1.0 + 1e-9):
        k = int(np.argmax(m))
        raise GridInjectError(
            "out-of-domain", "image point outside the disk of radius 2", point=pts[k]
        )
    m = np.minimum(m, 1.0)
    q = np.abs(psi) / np.pi
    t = np.divide(q, m * (1.0 - q) + q, out=np.zeros_like(q), where=(m + q) > 0)
    theta = np.sign(psi) * _alpha_inv(np.pi * t)
    zsrc = (1.0 + m) * np.exp(1j * theta)
    return np.column_stack([zsrc.real, zsrc.imag])


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------


@dataclass
class Domain:
    kind: str  # "square" (the unit square) or "disk"
    center: np.ndarray | None = None
    radius: float | None = None

    def contains(self, pts, pad: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "square":
            return np.all((pts >= -pad) & (pts <= 1.0 + pad), axis=1)
        d = np.linalg.norm(pts - self.center, axis=1)
        return d <= self.radius + pad

    def to_dict(self) -> dict:
        if self.kind == "square":
            return {"kind": "square"}
        return {
            "kind": "disk",
            "center": [float(self.center[0]), float(self.center[1])],
            "radius": float(self.radius),
        }


def _domain_from_dict(d: dict | None, default: Domain) -> Domain:
    if d is None:
        return default
    if not isinstance(d, dict) or "kind" not in d:
        raise GridInjectError("schema-error", "domain must be a dict with a 'kind'", domain=d)
    extra = set(d) - {"kind", "center", "radius"}
    if extra:
        raise GridInjectError("schema-error", "unknown domain fields", fields=sorted(extra))
    if d["kind"] == "square":
        return Domain("square")
    if d["kind"] == "disk":
        try:
            center = np.asarray(d["center"], dtype=float).reshape(2)
            radius = float(d["radius"])
        except (KeyError, ValueError, TypeError):
            raise GridInjectError(
                "schema-error", "disk domain needs 'center' [x, y] and 'radius'", domain=d
            ) from None
        if radius <= 0:
            raise GridInjectError("schema-error", "disk radius must be positive", radius=radius)
        return Domain("disk", center, radius)
    raise GridInjectError("schema-error", f"unknown domain kind {d['kind']!r}")


# ---------------------------------------------------------------------------
# PlanarMap
# ---------------------------------------------------------------------------


@dataclass
class PlanarMap:
    kind: str
    params: dict
    domain: Domain
    identity_on_boundary: bool
    discontinuities: np.ndarray  # (k, 2), possibly empty
    _eval: callable = field(repr=False)
    _jac: callable | None = field(default=None, repr=False)

    def eval_many(self, pts, tau_disc: float | None = None) -> np.ndarray:
        """Evaluate at an (n, 2) batch; guards domain and discontinuities."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if tau_disc is None:
            tau_disc = DEFAULTS["planar_maps.tau_disc"]
        inside = self.domain.contains(pts)
        if not np.all(inside):
            k = int(np.argmin(inside))
            raise GridInjectError(
                "out-of-domain", "point outside the map domain", point=pts[k]
            )
        for dpt in self.discontinuities:
            close = np.linalg.norm(pts - dpt, axis=1) < tau_disc
            if np.any(close):
                k = int(np.argmax(close))
                raise GridInjectError(
                    "undefined-at-point",
                    "the map has no value at a declared discontinuity",
                    point=pts[k],
                    discontinuity=dpt,
                )
        return self._eval(pts, tau_disc)

    def eval_one(self, p, tau_disc: float | None = None) -> np.ndarray:
        return self.eval_many(np.asarray(p, dtype=float)[None, :], tau_disc)[0]

    @property
    def has_analytic_jacobian(self) -> bool:
        return self._jac is not None


def finite_difference_jacobian(m: PlanarMap, pts, h: float | None = None) -> np.ndarray:
    """Central finite-difference Jacobians, shape (n, 2, 2)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if h is None:
        h = DEFAULTS["planar_maps.fd_step"]
    try:
        ux_p = m.eval_many(pts + [h, 0.0])
        ux_m = m.eval_many(pts - [h, 0.0])
        uy_p = m.eval_many(pts + [0.0, h])
        uy_m = m.eval_many(pts - [0.0, h])
    except GridInjectError as exc:
        raise GridInjectError(
            "jacobian-unreliable",
            "finite-difference stencil left the domain or hit a discontinuity",
            cause=exc.code,
            **exc.details,
        ) from exc
    out = np.empty((len(pts), 2, 2))
    out[:, :, 0] = (ux_p - ux_m) / (2.0 * h)
    out[:, :, 1] = (uy_p - uy_m) / (2.0 * h)
    return out


def jacobian(m: PlanarMap, pts, h: float | None = None) -> np.ndarray:
    """Analytic Jacobians when available, finite differences otherwise."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if m._jac is not None:
        return m._jac(pts)
    return finite_difference_jacobian(m, pts, h)


def local_affine_deviation(m: PlanarMap, center, r: float, n: int = 64) -> float:
    """Max distance between the map and its first-order model on a circle."""
    c = np.asarray(center, dtype=float)
    theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    ring = c + r * np.column_stack([np.cos(theta), np.sin(theta)])
    j0 = jacobian(m, c[None, :])[0]
    u0 = m.eval_one(c)
    model = u0 + (ring - c) @ j0.T
    return float(np.max(np.linalg.norm(m.eval_many(ring) - model, axis=1)))


def image_of_circle(m: PlanarMap, center, radius: float, n: int) -> np.ndarray:
    """Image polyline of a circle, n samples, closure implied."""
    c = np.asarray(center, dtype=float)
    theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    ring = c + radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return m.eval_many(ring)


# ---------------------------------------------------------------------------
# Registry and descriptors
# ---------------------------------------------------------------------------


def _np2(x, name: str) -> np.ndarray:
    try:
        return np.asarray(x, dtype=float).reshape(2)
    except (ValueError, TypeError):
        raise GridInjectError("schema-error", f"{name} must be a pair [x, y]", value=x) from None


def _build_identity(params: dict) -> tuple:
    return (lambda p, _t: p.copy()), (lambda p: np.tile(np.eye(2), (len(p), 1, 1))), Domain(
        "square"
    ), True


def _build_affine(params: dict) -> tuple:
    try:
        mat = np.asarray(params.get("matrix", np.eye(2)), dtype=float).reshape(2, 2)
    except (ValueError, TypeError):
        raise GridInjectError("schema-error", "affine matrix must be 2x2") from None
    off = _np2(params.get("offset", [0.0, 0.0]), "offset")

    def _ev(p, _t):
        return p @ mat.T + off

    def _jc(p):
        return np.tile(mat, (len(p), 1, 1))

    ident = bool(np.allclose(mat, np.eye(2)) and np.allclose(off, 0.0))
    return _ev, _jc, Domain("square"), ident


def _build_shear(params: dict) -> tuple:
    k = float(params.get("k", 0.5))

    def _ev(p, _t):
        x, y = p[:, 0], p[:, 1]
        out = p.copy()
        out[:, 0] = x + k * np.sin(np.pi * x) * 2.0 * y * (1.0 - y)
        return out

    def _jc(p):
        x, y = p[:, 0], p[:, 1]
        j = np.zeros((len(p), 2, 2))
        j[:, 0, 0] = 1.0 + k * np.pi * np.cos(np.pi * x) * 2.0 * y * (1.0 - y)
        j[:, 0, 1] = k * np.sin(np.pi * x) * 2.0 * (1.0 - 2.0 * y)
        j[:, 1, 1] = 1.0
        return j

    return _ev, _jc, Domain("square"), True


def _build_twist(params: dict) -> tuple:
    amp = float(params.get("amplitude", 1.0))
    r0 = float(params.get("radius", 0.5))
    c = _np2(params.get("center", [0.5, 0.5]), "center")
    if r0 <= 0:
        raise GridInjectError("schema-error", "twist radius must be positive", radius=r0)

    def _tau(r):
        return np.where(r < r0, 0.5 * amp * (1.0 + np.cos(np.pi * r / r0)), 0.0)

    def _ev(p, _t):
        v = p - c
        r = np.linalg.norm(v, axis=1)
        t = _tau(r)
        ct, st = np.cos(t), np.sin(t)
        out = np.empty_like(p)
        out[:, 0] = c[0] + ct * v[:, 0] - st * v[:, 1]
        out[:, 1] = c[1] + st * v[:, 0] + ct * v[:, 1]
        return out

    def _jc(p):
        v = p - c
        r = np.linalg.norm(v, axis=1)
        t = _tau(r)
        # tau'(r) / r, with its finite limit -amp pi^2 / (2 r0^2) at r = 0
        with np.errstate(invalid="ignore", divide="ignore"):
            slope = np.where(
                (r > 1e-12) & (r < r0),
                -0.5 * amp * np.pi / r0 * np.sin(np.pi * r / r0) / r,
                0.0,
            )
        slope = np.where(r <= 1e-12, -0.5 * amp * np.pi**2 / r0**2, slope)
        ct, st = np.cos(t), np.sin(t)
        j = np.empty((len(p), 2, 2))
        # R(tau) + slope * R(tau + pi/2) (v v^T)
        vv = v[:, :, None] * v[:, None, :]
        rot = np.empty_like(j)
        rot[:, 0, 0], rot[:, 0, 1] = ct, -st
        rot[:, 1, 0], rot[:, 1, 1] = st, ct
        rot90 = np.empty_like(j)
        rot90[:, 0, 0], rot90[:, 0, 1] = -st, -ct
        rot90[:, 1, 0], rot90[:, 1, 1] = ct, -st
        j[:] = rot + slope[:, None, None] * np.einsum("nij,njk->nik", rot90, vv)
        return j

    return _ev, _jc, Domain("square"), True


def _build_cavitation(params: dict) -> tuple:
    c = _np2(params.get("center", [0.0, 0.0]), "center")
    radius = float(params.get("radius", 1.0))
    a = float(params.get("strength", 0.3))
    if not 0 < a < radius:
        raise GridInjectError(
            "schema-error", "cavitation needs 0 < strength < radius", strength=a, radius=radius
        )
    beta = 1.0 - (a / radius) ** 2

    def _f(r):
        return np.sqrt(a * a + beta * r * r)

    def _ev(p, _t):
        v = p - c
        r = np.linalg.norm(v, axis=1)
        scale = np.divide(_f(r), r, out=np.zeros_like(r), where=r > 0)
        return c + scale[:, None] * v

    def _jc(p):
        v = p - c
        r = np.linalg.norm(v, axis=1)
        f = _f(r)
        fp = beta * r / f
        rad = np.divide(f, r, out=np.zeros_like(r), where=r > 0)
        j = rad[:, None, None] * np.tile(np.eye(2), (len(p), 1, 1))
        with np.errstate(invalid="ignore", divide="ignore"):
            er = np.where(r[:, None] > 0, v / r[:, None], 0.0)
        j += (fp - rad)[:, None, None] * (er[:, :, None] * er[:, None, :])
        return j

    return _ev, _jc, Domain("disk", c, radius), True


def _build_counterexample(params: dict) -> tuple:
    return (
        (lambda p, t: _counterexample_eval(p, t)),
        None,
        Domain("disk", np.zeros(2), 2.0),
        True,
    )


_BUILDERS = {
    "identity": _build_identity,
    "affine": _build_affine,
    "shear": _build_shear,
    "twist": _build_twist,
    "cavitation": _build_cavitation,
    "counterexample": _build_counterexample,
}

_PARAM_FIELDS = {
    "identity": set(),
    "affine": {"matrix", "offset"},
    "shear": {"k"},
    "twist": {"amplitude", "radius", "center"},
    "cavitation": {"center", "radius", "strength"},
    "counterexample": set(),
    "composition": {"maps"},
}

MAP_KINDS = tuple(sorted(_PARAM_FIELDS))


def map_from_descriptor(desc: dict) -> PlanarMap:
    """Build a PlanarMap from a descriptor dict; strict field validation."""
    if not isinstance(desc, dict) or "kind" not in desc:
        raise GridInjectError("schema-error", "map descriptor must be a dict with a 'kind'")
    extra = set(desc) - {"kind", "params", "domain", "discontinuities"}
    if extra:
        raise GridInjectError("schema-error", "unknown descriptor fields", fields=sorted(extra))
    kind = desc["kind"]
    if kind not in _PARAM_FIELDS:
        raise GridInjectError(
            "schema-error", f"unknown map kind {kind!r}", known=sorted(_PARAM_FIELDS)
        )
    params = desc.get("params", {}) or {}
    if not isinstance(params, dict):
        raise GridInjectError("schema-error", "params must be a dict", params=params)
    bad = set(params) - _PARAM_FIELDS[kind]
    if bad:
        raise GridInjectError(
            "schema-error", f"unknown params for kind {kind!r}", fields=sorted(bad)
        )

    if kind == "composition":
        stages = params.get("maps")
        if not isinstance(stages, list) or len(stages) < 1:
            raise GridInjectError("schema-error", "composition needs a list of maps")
        built = [map_from_descriptor(s) for s in stages]

        def _ev(p, t):
            out = p
            for stage in built:
                out = stage.eval_many(out, t)
            return out

        jac_fn = None
        if all(s._jac is not None for s in built):

            def jac_fn(p):
                cur = p
                total = np.tile(np.eye(2), (len(p), 1, 1))
                for stage in built:
                    total = np.einsum("nij,njk->nik", stage._jac(cur), total)
                    cur = stage.eval_many(cur)
                return total

        domain = _domain_from_dict(desc.get("domain"), built[0].domain)
        disc = built[0].discontinuities
        m = PlanarMap(kind, {"maps": [map_to_descriptor(s) for s in built]}, domain, False, disc, _ev, jac_fn)
    else:
        ev, jc, default_domain, ident = _BUILDERS[kind](params)
        domain = _domain_from_dict(desc.get("domain"), default_domain)
        if kind == "counterexample":
            disc = np.array([[-1.0, 0.0]])
        elif kind == "cavitation":
            disc = np.array([_np2(params.get("center", [0.0, 0.0]), "center")])
        else:
            disc = np.empty((0, 2))
        m = PlanarMap(kind, dict(params), domain, ident, disc, ev, jc)

    declared = desc.get("discontinuities")
    if declared is not None:
        try:
            declared = np.asarray(declared, dtype=float).reshape(-1, 2)
        except (ValueError, TypeError):
            raise GridInjectError(
                "schema-error", "discontinuities must be a list of [x, y] pairs"
            ) from None
        m.discontinuities = (
            np.vstack([m.discontinuities, declared]) if len(m.discontinuities) else declared
        )
    return m


def map_to_descriptor(m: PlanarMap) -> dict:
    """Canonical descriptor (params fully expanded) for serialization."""
    params: dict = {}
    if m.kind == "affine":
        mat = np.asarray(m.params.get("matrix", np.eye(2)), dtype=float)
        off = np.asarray(m.params.get("offset", [0.0, 0.0]), dtype=float)
        params = {"matrix": mat.tolist(), "offset": off.tolist()}
    elif m.kind == "shear":
        params = {"k": float(m.params.get("k", 0.5))}
    elif m.kind == "twist":
        params = {
            "amplitude": float(m.params.get("amplitude", 1.0)),
            "radius": float(m.params.get("radius", 0.5)),
            "center": list(map(float, np.asarray(m.params.get("center", [0.5, 0.5])))),
        }
    elif m.kind == "cavitation":
        params = {
            "center": list(map(float, np.asarray(m.params.get("center", [0.0, 0.0])))),
            "radius": float(m.params.get("radius", 1.0)),
            "strength": float(m.params.get("strength", 0.3)),
        }
    elif m.kind == "composition":
        params = {"maps": m.params["maps"]}
    desc = {"kind": m.kind, "params": params, "domain": m.domain.to_dict()}
    return desc
