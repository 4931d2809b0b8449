"""Source grids on the unit square and preimage root-finding along lines.

A grid is K+1 vertical lines at abscissas ``s`` and K+1 horizontal lines
at ordinates ``t``, with s_0 = t_0 = 0 and s_K = t_K = 1.  Interior
coordinates start uniform and are jittered (low-discrepancy, seeded,
|jitter| < 1/(4K)) only when a line fails one of three screens:

* distance from the line to every declared discontinuity > tau_disc;
* min |det Du| along the line > tau_det (sampled; analytic Jacobians
  when the map has them, central differences otherwise; a negative
  tau_det disables this screen entirely);
* the total variation of the image of the line is finite and stable
  under refinement (within ``inv_check.tv_stability`` relatively).

``preimages_on_segment`` locates the parameters along a grid segment
where a chosen image coordinate crosses a given level: sign changes on a
dense sample refined by bisection.  Flat or non-transversal patterns
raise ``tangential-crossing`` rather than guessing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .errors import GridInjectError
from .planar_maps import PlanarMap, jacobian
from .tolerances import Tolerances

__all__ = ["Grid", "GridSegment", "build_grid", "grid_polyline", "preimages_on_segment", "make_segment"]


@dataclass
class Grid:
    K: int
    s: np.ndarray  # (K+1,) vertical line abscissas
    t: np.ndarray  # (K+1,) horizontal line ordinates

    def to_dict(self) -> dict:
        return {"K": int(self.K), "s": self.s.tolist(), "t": self.t.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "Grid":
        try:
            K = int(d["K"])
            s = np.asarray(d["s"], dtype=float)
            t = np.asarray(d["t"], dtype=float)
        except (KeyError, TypeError, ValueError):
            raise GridInjectError("schema-error", "grid dict needs K, s, t") from None
        if s.shape != (K + 1,) or t.shape != (K + 1,):
            raise GridInjectError("schema-error", "grid coordinate arrays must have K+1 entries")
        return Grid(K, s, t)


@dataclass
class GridSegment:
    """One maximal piece of a grid line between consecutive crossings.

    ``orientation`` is "v" for a vertical line (fixed x = coord, y varies)
    or "h" for a horizontal one.  ``lo``/``hi`` bound the varying
    coordinate; ``line_index`` identifies the host line in the grid.
    """

    orientation: str
    line_index: int
    coord: float
    lo: float
    hi: float

    def points(self, params: np.ndarray) -> np.ndarray:
        """Map parameters in [lo, hi] to plane points on the segment."""
        params = np.asarray(params, dtype=float)
        out = np.empty((len(params), 2))
        if self.orientation == "v":
            out[:, 0] = self.coord
            out[:, 1] = params
        else:
            out[:, 0] = params
            out[:, 1] = self.coord
        return out


def make_segment(orientation: str, coord: float, lo: float = 0.0, hi: float = 1.0, line_index: int = 0) -> GridSegment:
    if orientation not in ("v", "h"):
        raise GridInjectError("schema-error", "orientation must be 'v' or 'h'")
    if not hi > lo:
        raise GridInjectError("degenerate-segment", "segment span is empty", lo=lo, hi=hi)
    return GridSegment(orientation, line_index, float(coord), float(lo), float(hi))


def _line_points(orientation: str, coord: float, params: np.ndarray) -> np.ndarray:
    pts = np.empty((len(params), 2))
    if orientation == "v":
        pts[:, 0] = coord
        pts[:, 1] = params
    else:
        pts[:, 0] = params
        pts[:, 1] = coord
    return pts


def _line_ok(m: PlanarMap, orientation: str, coord: float, tol: Tolerances) -> tuple[bool, str]:
    tau_disc = tol["planar_maps.tau_disc"]
    n = int(tol["grids.n_samples"])

    # screen 1: declared discontinuities keep their distance to the line
    for d in m.discontinuities:
        perp = d[0] - coord if orientation == "v" else d[1] - coord
        along = d[1] if orientation == "v" else d[0]
        dist = abs(perp) if 0.0 <= along <= 1.0 else np.hypot(perp, min(abs(along), abs(along - 1.0)))
        if dist <= tau_disc:
            return False, "discontinuity"

    params = np.linspace(0.0, 1.0, n + 1)
    pts = _line_points(orientation, coord, params)

    # screen 2: Jacobian determinant bounded away from zero along the line
    tau_det = tol["grids.tau_det"]
    if tau_det >= 0.0:
        # pull the sample strictly inside so finite differences stay in domain
        h = tol["planar_maps.fd_step"]
        inner = np.clip(pts, 2.0 * h, 1.0 - 2.0 * h)
        jac = jacobian(m, inner, h)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if np.min(np.abs(det)) <= tau_det:
            return False, "determinant"

    # screen 3: image total variation finite and refinement stable
    img = m.eval_many(pts)
    tv = float(np.sum(np.linalg.norm(np.diff(img, axis=0), axis=1)))
    img2 = m.eval_many(_line_points(orientation, coord, np.linspace(0.0, 1.0, 2 * n + 1)))
    tv2 = float(np.sum(np.linalg.norm(np.diff(img2, axis=0), axis=1)))
    if not np.isfinite(tv2) or abs(tv2 - tv) > tol["inv_check.tv_stability"] * max(tv2, 1e-12) + 1e-12:
        return False, "variation"
    return True, ""


def build_grid(m: PlanarMap, K: int, seed: int = 0, tol: Tolerances | None = None) -> Grid:
    """Uniform grid when the screens pass, jittered where they do not."""
    tol = tol or Tolerances()
    if m.domain.kind != "square":
        raise GridInjectError(
            "schema-error", "grid construction needs a square-domain map", domain=m.domain.kind
        )
    if K < 2:
        raise GridInjectError("schema-error", "need K >= 2", K=K)
    halton = qmc.Halton(d=1, scramble=True, seed=seed)
    max_retries = int(tol["grids.max_retries"])
    coords = {}
    for orientation in ("v", "h"):
        vals = np.empty(K + 1)
        vals[0], vals[K] = 0.0, 1.0
        # boundary lines cannot move; they must pass as they are
        for coord, name in ((0.0, "low boundary"), (1.0, "high boundary")):
            ok, why = _line_ok(m, orientation, coord, tol)
            if not ok:
                raise GridInjectError(
                    "grid-construction-failed",
                    f"{name} line fails the {why} screen and cannot be moved",
                    orientation=orientation,
                    coord=coord,
                )
        for i in range(1, K):
            base = i / K
            val = base
            ok, why = _line_ok(m, orientation, val, tol)
            tries = 0
            while not ok:
                tries += 1
                if tries > max_retries:
                    raise GridInjectError(
                        "grid-construction-failed",
                        f"line keeps failing the {why} screen after jitter",
                        orientation=orientation,
                        index=i,
                        last=val,
                    )
                jit = (2.0 * float(halton.random(1)[0, 0]) - 1.0) / (4.0 * K)
                val = base + jit
                ok, why = _line_ok(m, orientation, val, tol)
            vals[i] = val
        coords[orientation] = vals
    grid = Grid(K, coords["v"], coords["h"])
    # construction invariants
    for arr in (grid.s, grid.t):
        assert arr[0] == 0.0 and arr[-1] == 1.0
        assert np.all(np.diff(arr) > 0)
        assert np.all(np.abs(arr[1:-1] - np.arange(1, K) / K) < 1.0 / (4.0 * K))
    return grid


def grid_polyline(grid: Grid) -> tuple[list[GridSegment], np.ndarray]:
    """Maximal grid segments plus the (K+1) x (K+1) vertex array.

    Every line is split at its crossings with the perpendicular lines,
    giving 2 K (K+1) segments; vertices[i, j] is the point (s_i, t_j).
    """
    K = grid.K
    segments = []
    for i, s in enumerate(grid.s):
        for j in range(K):
            segments.append(GridSegment("v", i, float(s), float(grid.t[j]), float(grid.t[j + 1])))
    for j, t in enumerate(grid.t):
        for i in range(K):
            segments.append(GridSegment("h", j, float(t), float(grid.s[i]), float(grid.s[i + 1])))
    vertices = np.empty((K + 1, K + 1, 2))
    vertices[:, :, 0] = grid.s[:, None]
    vertices[:, :, 1] = grid.t[None, :]
    return segments, vertices


def preimages_on_segment(
    m: PlanarMap,
    seg: GridSegment,
    axis: int,
    level: float,
    tol: Tolerances | None = None,
) -> np.ndarray:
    """Parameters in (lo, hi) where (u . seg)[axis] crosses ``level``.

    Sign changes on a dense sample are refined by bisection; each bracket
    must move the image coordinate by at least ``grids.tau_transversal``,
    and samples sitting exactly on the level (or flat runs at the level)
    raise ``tangential-crossing``.
    """
    tol = tol or Tolerances()
    n = int(tol["grids.n_samples"])
    tau_t = tol["grids.tau_transversal"]
    params = np.linspace(seg.lo, seg.hi, n + 1)
    f = m.eval_many(seg.points(params))[:, axis] - level

    on_level = np.abs(f) < 1e-12
    if np.any(on_level[1:-1]) or (on_level[0] and on_level[1]) or (on_level[-1] and on_level[-2]):
        k = int(np.argmax(on_level))
        raise GridInjectError(
            "tangential-crossing",
            "image coordinate sits exactly on the level at a sample",
            param=params[k],
            axis=axis,
            level=level,
        )

    sign = np.sign(f)
    flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    if len(flips) == 0:
        return np.empty(0)
    gaps = np.abs(f[flips + 1] - f[flips])
    if np.any(gaps < tau_t):
        k = flips[int(np.argmin(gaps))]
        raise GridInjectError(
            "tangential-crossing",
            "crossing bracket moves the image coordinate by less than tau_transversal",
            bracket=[params[k], params[k + 1]],
            increment=float(np.min(gaps)),
            axis=axis,
            level=level,
        )
    lo = params[flips].copy()
    hi = params[flips + 1].copy()
    f_lo = f[flips].copy()
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f_mid = m.eval_many(seg.points(mid))[:, axis] - level
        take_left = f_lo * f_mid <= 0.0
        hi = np.where(take_left, mid, hi)
        lo = np.where(take_left, lo, mid)
        f_lo = np.where(take_left, f_lo, f_mid)
    return np.sort(0.5 * (lo + hi))
