"""Arrival grids in image space and marked points on the source grid.

The arrival grid is a partition of the image square [0,1]^2 into
rectangles by lines x = x_n and y = y_m.  Interior arrival coordinates
are drawn from a base lattice of spacing eta/2 with seeded jitter of
amplitude eta/8 (so consecutive gaps stay within [eta/4, 3 eta/4], in
particular below eta), resampled while they land in excluded intervals:

* A-bar: projections of all grid-vertex images, widened by tau_bad;
* B-bar: projections of the image of a small ring around each declared
  discontinuity, widened the same way;
* C-bar: projections of line-image points where the sampled derivative
  of the relevant image coordinate along the line is too small to give
  transversal crossings at the sampling resolution;
* D-bar (ordinates only): projections of the crossing images already
  committed on the vertical arrival lines.

The outermost coordinates 0 and 1 bound the partition but are never
searched for crossings: for maps with a collapsed image coordinate every
grid point would be a tangential crossing of such a line, and the
interior lines carry all the structure the assembly needs.

Marked points are the crossings of (searched) grid lines with interior
arrival lines, plus the boundary lattice points of the grid.  Their
images must be pairwise distinct (checked first, and reported with every
offending pair) and must keep clear of interior arrival vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridInjectError
from .grids import Grid, GridSegment, grid_polyline, preimages_on_segment
from .planar_maps import PlanarMap
from .tolerances import Tolerances

__all__ = [
    "ArrivalGrid",
    "MarkedPoint",
    "SimpleSegment",
    "MarkedSet",
    "bad_coordinates",
    "build_arrival_grid",
    "marked_points",
    "searched_lines",
]


@dataclass
class ArrivalGrid:
    x: np.ndarray  # (N+1,), x[0] = 0, x[N] = 1
    y: np.ndarray  # (M+1,)

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "y": self.y.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "ArrivalGrid":
        try:
            x = np.asarray(d["x"], dtype=float)
            y = np.asarray(d["y"], dtype=float)
        except (KeyError, TypeError, ValueError):
            raise GridInjectError("schema-error", "arrival grid dict needs x and y arrays") from None
        return ArrivalGrid(x, y)


def searched_lines(m: PlanarMap, grid: Grid) -> list[tuple[str, int, float]]:
    """Grid lines that take part in the crossing search.

    Boundary lines are exempt when the map is the identity on the square
    boundary: they map onto themselves and are kept as exact identity
    paths instead of being cut.
    """
    lines = []
    rng_v = range(1, grid.K) if m.identity_on_boundary else range(grid.K + 1)
    rng_h = range(1, grid.K) if m.identity_on_boundary else range(grid.K + 1)
    for i in rng_v:
        lines.append(("v", i, float(grid.s[i])))
    for j in rng_h:
        lines.append(("h", j, float(grid.t[j])))
    return lines


def _full_segment(orientation: str, index: int, coord: float) -> GridSegment:
    return GridSegment(orientation, index, coord, 0.0, 1.0)


def _merge_intervals(vals: np.ndarray, half_width: float) -> list[tuple[float, float]]:
    if len(vals) == 0:
        return []
    vals = np.sort(vals)
    merged = [[vals[0] - half_width, vals[0] + half_width]]
    for v in vals[1:]:
        lo, hi = v - half_width, v + half_width
        if lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(a, b) for a, b in merged]


def _in_intervals(value: float, intervals: list[tuple[float, float]]) -> bool:
    return any(lo <= value <= hi for lo, hi in intervals)


def bad_coordinates(
    m: PlanarMap,
    grid: Grid,
    axis: int,
    tol: Tolerances | None = None,
    extra_values: np.ndarray | None = None,
) -> list[tuple[float, float]]:
    """Excluded intervals for arrival coordinates on one image axis."""
    tol = tol or Tolerances()
    tau_bad = tol["arrival.tau_bad"]
    n = int(tol["grids.n_samples"])
    vals = []

    _, vertices = grid_polyline(grid)
    vals.append(m.eval_many(vertices.reshape(-1, 2))[:, axis])

    for d in m.discontinuities:
        radius = max(16.0 * tol["planar_maps.tau_disc"], 1e-6)
        theta = np.linspace(0.0, 2.0 * np.pi, 32, endpoint=False)
        ring = d + radius * np.column_stack([np.cos(theta), np.sin(theta)])
        ring = ring[m.domain.contains(ring)]
        if len(ring):
            vals.append(m.eval_many(ring)[:, axis])

    # low-transversality zones: derivative small relative to the sampling
    # step, so a crossing bracket there could move less than tau_transversal
    deriv_floor = tol["grids.tau_transversal"] * n
    params = np.linspace(0.0, 1.0, n + 1)
    for orientation in ("v", "h"):
        coords = grid.s if orientation == "v" else grid.t
        for c in coords:
            img = m.eval_many(_full_segment(orientation, 0, float(c)).points(params))[:, axis]
            deriv = np.gradient(img, params)
            flat = np.abs(deriv) < deriv_floor
            if np.any(flat):
                vals.append(img[flat])

    if extra_values is not None and len(extra_values):
        vals.append(np.asarray(extra_values, dtype=float))

    allv = np.concatenate(vals)
    allv = allv[(allv > -tau_bad) & (allv < 1.0 + tau_bad)]
    intervals = _merge_intervals(allv, tau_bad)
    covered = sum(min(b, 1.0) - max(a, 0.0) for a, b in intervals if b > 0.0 and a < 1.0)
    if covered > 0.5:
        raise GridInjectError(
            "map-too-degenerate",
            "excluded intervals cover more than half of the arrival axis",
            axis=axis,
            covered=covered,
        )
    return intervals


def _draw_levels(eta: float, rng: np.random.Generator, exclusions, max_retries: int) -> np.ndarray:
    """Interior arrival coordinates: base lattice eta/2 with jitter eta/8."""
    k_max = int(np.floor((1.0 - eta / 4.0) / (eta / 2.0)))
    levels = []
    for k in range(1, k_max + 1):
        base = k * eta / 2.0
        val = None
        for _ in range(max_retries):
            cand = base + rng.uniform(-eta / 8.0, eta / 8.0)
            if not _in_intervals(cand, exclusions):
                val = cand
                break
        if val is None:
            raise GridInjectError(
                "arrival-grid-failed",
                "could not place an arrival coordinate outside the excluded intervals",
                base=base,
            )
        levels.append(val)
    return np.asarray(levels)


def _crossings_for_level(m, lines, axis, level, tol):
    """(line, param) pairs where the image coordinate crosses the level."""
    out = []
    for orientation, index, coord in lines:
        seg = _full_segment(orientation, index, coord)
        roots = preimages_on_segment(m, seg, axis, level, tol)
        for p in roots:
            out.append((orientation, index, coord, float(p)))
    return out


def _levels_with_crossings(m, lines, axis, eta, rng, exclusions, tol):
    """Draw levels, then validate transversality, redrawing bad levels."""
    max_retries = int(tol["arrival.max_retries"])
    levels = _draw_levels(eta, rng, exclusions, max_retries)
    crossings = {}
    for idx, level in enumerate(levels):
        attempts = 0
        while True:
            try:
                crossings[idx] = _crossings_for_level(m, lines, axis, float(levels[idx]), tol)
                break
            except GridInjectError as exc:
                if exc.code != "tangential-crossing":
                    raise
                attempts += 1
                if attempts > max_retries:
                    raise GridInjectError(
                        "arrival-grid-failed",
                        "an arrival coordinate keeps producing tangential crossings",
                        axis=axis,
                        level=float(levels[idx]),
                    ) from exc
                base = (idx + 1) * eta / 2.0
                redrawn = None
                for _ in range(max_retries):
                    cand = base + rng.uniform(-eta / 8.0, eta / 8.0)
                    if not _in_intervals(cand, exclusions):
                        redrawn = cand
                        break
                if redrawn is None:
                    raise GridInjectError(
                        "arrival-grid-failed",
                        "could not redraw an arrival coordinate",
                        axis=axis,
                    ) from exc
                levels[idx] = redrawn
    return levels, crossings


def build_arrival_grid(
    m: PlanarMap, grid: Grid, eta: float, seed: int = 0, tol: Tolerances | None = None
) -> ArrivalGrid:
    """Arrival partition with validated, transversal interior lines."""
    tol = tol or Tolerances()
    if eta <= 0:
        raise GridInjectError("schema-error", "eta must be positive", eta=eta)
    if eta >= 1.0 / grid.K:
        raise GridInjectError(
            "eta-too-large",
            "arrival spacing must be finer than the source grid: eta < 1/K",
            eta=eta,
            K=grid.K,
        )
    rng = np.random.default_rng(seed)
    lines = searched_lines(m, grid)

    x_excl = bad_coordinates(m, grid, 0, tol)
    x_levels, x_cross = _levels_with_crossings(m, lines, 0, eta, rng, x_excl, tol)

    # ordinates additionally avoid the committed x-crossing images
    cross_pts = []
    for pts in x_cross.values():
        for orientation, index, coord, p in pts:
            cross_pts.append(_full_segment(orientation, index, coord).points(np.array([p]))[0])
    d_bar = (
        m.eval_many(np.asarray(cross_pts))[:, 1] if cross_pts else np.empty(0)
    )
    y_excl = bad_coordinates(m, grid, 1, tol, extra_values=d_bar)
    y_levels, _ = _levels_with_crossings(m, lines, 1, eta, rng, y_excl, tol)

    x = np.concatenate([[0.0], np.sort(x_levels), [1.0]])
    y = np.concatenate([[0.0], np.sort(y_levels), [1.0]])
    for arr in (x, y):
        if np.any(np.diff(arr) <= 0) or np.any(np.diff(arr) >= eta):
            raise GridInjectError(
                "arrival-grid-failed", "arrival spacing invariant violated", spacing=np.diff(arr)
            )
    return ArrivalGrid(x, y)


# ---------------------------------------------------------------------------
# Marked points
# ---------------------------------------------------------------------------


@dataclass
class MarkedPoint:
    id: int
    kind: str  # "lattice" or "crossing"
    point: np.ndarray
    image: np.ndarray
    lines: list = field(default_factory=list)  # [(orientation, line_index, param)]
    crossing: dict | None = None  # {"axis": 0|1, "level_index": int}

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "point": self.point.tolist(),
            "image": self.image.tolist(),
            "lines": [[o, int(i), float(p)] for o, i, p in self.lines],
            "crossing": self.crossing,
        }


@dataclass
class SimpleSegment:
    line: tuple  # (orientation, line_index)
    coord: float
    p_lo: float
    p_hi: float
    id_lo: int
    id_hi: int
    kind: str  # "generalized" or "identity"
    vertices: list = field(default_factory=list)  # [(i, j, param)] interior grid vertices


@dataclass
class MarkedSet:
    points: list
    segments: list
    by_line: dict
    grid: Grid
    arrival: ArrivalGrid
    identity_boundary: bool


def _lattice_key(x: float, y: float) -> tuple:
    return (float(x), float(y))


def marked_points(
    m: PlanarMap, grid: Grid, ag: ArrivalGrid, tol: Tolerances | None = None
) -> MarkedSet:
    """Marked points, their images, and the simple segments between them."""
    tol = tol or Tolerances()
    tau_bad = tol["arrival.tau_bad"]
    K = grid.K
    id_b = m.identity_on_boundary

    registry: dict[tuple, MarkedPoint] = {}
    points: list[MarkedPoint] = []

    def _get_marked(x: float, y: float, kind: str, line_entry, crossing=None) -> MarkedPoint:
        key = _lattice_key(x, y)
        mp = registry.get(key)
        if mp is None:
            mp = MarkedPoint(len(points), kind, np.array([x, y]), np.empty(2), [], crossing)
            registry[key] = mp
            points.append(mp)
        mp.lines.append(line_entry)
        if crossing is not None and mp.crossing is None:
            mp.crossing = crossing
            mp.kind = "crossing"
        return mp

    searched = searched_lines(m, grid)
    searched_keys = {(o, i) for o, i, _ in searched}

    all_lines = [("v", i, float(grid.s[i])) for i in range(K + 1)] + [
        ("h", j, float(grid.t[j])) for j in range(K + 1)
    ]

    per_line: dict[tuple, list] = {}
    for orientation, index, coord in all_lines:
        entries = []  # (param, MarkedPoint)
        is_boundary = index in (0, K)
        if is_boundary:
            # boundary lines carry a T-junction at every lattice point on
            # them (each perpendicular line terminates there), so they are
            # always subdivided at the full lattice
            perp = grid.t if orientation == "v" else grid.s
            for p in perp:
                x, y = (coord, float(p)) if orientation == "v" else (float(p), coord)
                mp = _get_marked(x, y, "lattice", (orientation, index, float(p)))
                entries.append((float(p), mp))
        else:
            for p in (0.0, 1.0):
                x, y = (coord, p) if orientation == "v" else (p, coord)
                mp = _get_marked(x, y, "lattice", (orientation, index, p))
                entries.append((p, mp))
        if (orientation, index) in searched_keys:
            seg = _full_segment(orientation, index, coord)
            for axis, levels in ((0, ag.x), (1, ag.y)):
                for li in range(1, len(levels) - 1):
                    roots = preimages_on_segment(m, seg, axis, float(levels[li]), tol)
                    for p in roots:
                        x, y = (coord, float(p)) if orientation == "v" else (float(p), coord)
                        mp = _get_marked(
                            x,
                            y,
                            "crossing",
                            (orientation, index, float(p)),
                            {"axis": axis, "level_index": li},
                        )
                        entries.append((float(p), mp))
        entries.sort(key=lambda e: e[0])
        for (p1, m1), (p2, m2) in zip(entries, entries[1:]):
            if m1 is not m2 and p2 - p1 < 1e-12:
                raise GridInjectError(
                    "degenerate-configuration",
                    "two marked points collide on a grid line",
                    line=[orientation, index],
                    params=[p1, p2],
                )
        per_line[(orientation, index)] = entries

    imgs = m.eval_many(np.array([mp.point for mp in points]))
    for mp, img in zip(points, imgs):
        mp.image = img

    # validation order matters: duplicate images are diagnosed before
    # anything else, carrying the offending pairs closest-first (capped)
    pairs = []
    img_arr = imgs
    for a in range(len(points)):
        d = np.linalg.norm(img_arr[a + 1 :] - img_arr[a], axis=1)
        for off in np.nonzero(d < 1e-9)[0]:
            b = a + 1 + off
            pairs.append(
                {
                    "points": [points[a].point.tolist(), points[b].point.tolist()],
                    "images": [points[a].image.tolist(), points[b].image.tolist()],
                    "distance": float(d[off]),
                }
            )
    pairs.sort(key=lambda pr: (pr["distance"], pr["points"]))
    del pairs[256:]
    if pairs:
        raise GridInjectError(
            "distinct-image-violation",
            "marked points with coinciding images",
            pair=pairs[0],
            pairs=pairs,
        )

    xi = ag.x[1:-1]
    yi = ag.y[1:-1]
    if len(xi) and len(yi):
        for mp in points:
            dx = np.min(np.abs(mp.image[0] - xi))
            dy = np.min(np.abs(mp.image[1] - yi))
            if np.hypot(dx, dy) < tau_bad / 2.0:
                raise GridInjectError(
                    "degenerate-configuration",
                    "a marked image sits too close to an interior arrival vertex",
                    point=mp.point,
                    image=mp.image,
                )

    for mp in points:
        if mp.crossing is not None:
            levels = ag.x if mp.crossing["axis"] == 0 else ag.y
            assert abs(mp.image[mp.crossing["axis"]] - levels[mp.crossing["level_index"]]) < 1e-8

    segments: list[SimpleSegment] = []
    for orientation, index, coord in all_lines:
        entries = per_line[(orientation, index)]
        is_boundary = index in (0, K)
        kind = "identity" if (id_b and is_boundary) else "generalized"
        perp_coords = grid.t if orientation == "v" else grid.s
        perp_interior = [(jj, float(perp_coords[jj])) for jj in range(1, K)]
        for (p1, m1), (p2, m2) in zip(entries, entries[1:]):
            seg = SimpleSegment((orientation, index), coord, p1, p2, m1.id, m2.id, kind)
            if kind == "generalized" and not is_boundary:
                for jj, pv in perp_interior:
                    if p1 < pv < p2:
                        ij = (index, jj) if orientation == "v" else (jj, index)
                        seg.vertices.append((ij[0], ij[1], pv))
                    elif abs(pv - p1) < 1e-12 or abs(pv - p2) < 1e-12:
                        raise GridInjectError(
                            "degenerate-configuration",
                            "an interior grid vertex coincides with a marked point",
                            vertex=[orientation, index, pv],
                        )
            segments.append(seg)

    by_line = {k: [(p, mp.id) for p, mp in v] for k, v in per_line.items()}
    return MarkedSet(points, segments, by_line, grid, ag, id_b)
