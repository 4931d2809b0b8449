"""Degree probes for the circle criterion (INV).

A map u satisfies the criterion on a circle C = bdry B(x0, r) when, for
almost every probe point z, the topological degree of u restricted to C,
evaluated at u(z), is nonzero if z lies inside B(x0, r) and zero if z
lies outside.  The degree is computed as the winding number of the
sampled image curve around the probe's image.

Probes whose image lands on the image curve (within ``geometry.tau_on``)
or whose evaluation hits a declared discontinuity are reported as
``indeterminate`` and never count as violations: the criterion quantifies
over almost-every point, and an on-curve probe carries no information.
The default probe strategy is a center probe plus two rings, one at
radius r/2 (inside) and one at 3r/2 (outside); explicit probe points can
be supplied instead, each classified by its distance to the center.
"""

from __future__ import annotations

import numpy as np

from .errors import GridInjectError
from .geometry import point_polyline_distance, winding_number
from .planar_maps import PlanarMap, image_of_circle
from .tolerances import Tolerances

__all__ = [
    "default_probes",
    "check_inv_on_circle",
    "scan_inv",
    "radial_circles",
    "random_circles",
]


def default_probes(center, r: float, n_ring: int = 8) -> tuple[np.ndarray, list[str]]:
    """Center probe plus rings at r/2 (inside) and 3r/2 (outside)."""
    c = np.asarray(center, dtype=float)
    theta = np.linspace(0.0, 2.0 * np.pi, n_ring, endpoint=False) + np.pi / (2 * n_ring)
    ring = np.column_stack([np.cos(theta), np.sin(theta)])
    pts = [c[None, :], c + 0.5 * r * ring, c + 1.5 * r * ring]
    loc = ["inside"] + ["inside"] * n_ring + ["outside"] * n_ring
    return np.vstack(pts), loc


def _total_variation(curve: np.ndarray) -> float:
    closed = np.vstack([curve, curve[:1]])
    return float(np.sum(np.linalg.norm(np.diff(closed, axis=0), axis=1)))


def check_inv_on_circle(
    m: PlanarMap,
    center,
    r: float,
    probes=None,
    tol: Tolerances | None = None,
) -> dict:
    """Degree report for one circle.

    Returns a dict with one entry per probe (point, location, status,
    degree) and an overall ``ok`` flag: ok means no determinate probe
    violated the inside-nonzero / outside-zero rule.
    """
    tol = tol or Tolerances()
    c = np.asarray(center, dtype=float)
    r = float(r)
    if not np.isfinite(r) or r <= 0:
        raise GridInjectError("bad-circle", "radius must be positive and finite", radius=r)
    n_curve = int(tol["inv_check.n_curve"])

    if probes is None:
        probe_pts, locations = default_probes(c, r)
    else:
        probe_pts = np.atleast_2d(np.asarray(probes, dtype=float))
        d = np.linalg.norm(probe_pts - c, axis=1)
        if np.any(np.abs(d - r) < 1e-12):
            k = int(np.argmin(np.abs(d - r)))
            raise GridInjectError(
                "bad-circle", "probe lies on the circle itself", point=probe_pts[k]
            )
        locations = ["inside" if di < r else "outside" for di in d]

    # the circle and all probes must sit inside the domain
    theta = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
    ring = c + r * np.column_stack([np.cos(theta), np.sin(theta)])
    if not (np.all(m.domain.contains(ring)) and np.all(m.domain.contains(probe_pts))):
        raise GridInjectError(
            "bad-circle",
            "circle or probes leave the map domain",
            center=c,
            radius=r,
        )

    curve = image_of_circle(m, c, r, n_curve)
    tv_half = _total_variation(image_of_circle(m, c, r, n_curve // 2))
    tv = _total_variation(curve)
    if abs(tv - tv_half) > tol["inv_check.tv_stability"] * max(tv, 1e-12) + 1e-12:
        raise GridInjectError(
            "bad-circle",
            "image curve total variation is not refinement stable",
            tv=tv,
            tv_half=tv_half,
            center=c,
            radius=r,
        )

    entries = []
    violations = []
    for p, loc in zip(probe_pts, locations):
        entry = {"point": p.tolist(), "location": loc, "status": "ok", "degree": None}
        try:
            q = m.eval_one(p)
        except GridInjectError as exc:
            entry["status"] = "indeterminate"
            entry["reason"] = exc.code
            entries.append(entry)
            continue
        try:
            deg = winding_number(
                curve,
                q,
                tau_on=tol["geometry.tau_on"],
                residual_tol=tol["geometry.winding_residual"],
            )
        except GridInjectError as exc:
            if exc.code != "on-curve":
                raise
            entry["status"] = "indeterminate"
            entry["reason"] = "on-curve"
            entries.append(entry)
            continue
        entry["degree"] = deg
        bad = (loc == "inside" and deg == 0) or (loc == "outside" and deg != 0)
        if bad:
            entry["status"] = "violation"
            violations.append(entry)
        entries.append(entry)

    return {
        "center": c.tolist(),
        "radius": r,
        "curve_samples": n_curve,
        "probes": entries,
        "n_violations": len(violations),
        "n_indeterminate": sum(1 for e in entries if e["status"] == "indeterminate"),
        "ok": len(violations) == 0,
    }


def scan_inv(m: PlanarMap, circles, probes=None, tol: Tolerances | None = None) -> dict:
    """Run the circle check over a family; aggregates per-circle reports."""
    reports = [check_inv_on_circle(m, c, r, probes=probes, tol=tol) for c, r in circles]
    n_viol = sum(rep["n_violations"] for rep in reports)
    return {
        "circles": reports,
        "n_circles": len(reports),
        "n_violations": n_viol,
        "ok": n_viol == 0,
    }


def radial_circles(center, start: float, stop: float, step: float) -> list:
    """Concentric family: radii start, start+step, ..., up to stop."""
    if step <= 0 or stop < start or start <= 0:
        raise GridInjectError(
            "bad-circle", "need 0 < start <= stop and step > 0", start=start, stop=stop, step=step
        )
    c = np.asarray(center, dtype=float)
    radii = np.arange(start, stop + 0.5 * step, step)
    return [(c.copy(), float(r)) for r in radii]


def random_circles(n: int, seed: int, m: PlanarMap) -> list:
    """Seeded random circles compactly inside the map domain.

    Keeps the outside probe ring (radius 3r/2) inside the domain too.
    """
    rng = np.random.default_rng(seed)
    out = []
    if m.domain.kind == "square":
        while len(out) < n:
            c = rng.uniform(0.3, 0.7, size=2)
            margin = min(c.min(), 1.0 - c.max())
            r = rng.uniform(0.03, margin / 1.6)
            out.append((c, float(r)))
    else:
        c0, big_r = m.domain.center, m.domain.radius
        while len(out) < n:
            rho = rng.uniform(0.0, 0.5 * big_r)
            ang = rng.uniform(0.0, 2.0 * np.pi)
            c = c0 + rho * np.array([np.cos(ang), np.sin(ang)])
            room = big_r - rho
            r = rng.uniform(0.05 * big_r, room / 1.8)
            out.append((c, float(r)))
    return out
