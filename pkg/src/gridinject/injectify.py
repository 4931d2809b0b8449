"""Straightening a grid image into an injective approximation.

Each simple segment of the cut grid maps, under u, into one closed
arrival rectangle.  The rectangle is charted onto the closed unit disk
by an affine map to [-1,1]^2 followed by the square-to-disk radial
scaling v -> v * (sup-norm / 2-norm); its inverse scales back by
(2-norm / sup-norm).  In the chart the straightened map v sends each
simple segment to the chord between its endpoint images, so distinct
chords meet in at most one point and the whole straightened image can
be audited pairwise in closed form.

Interior grid vertices are placed at the intersection of the two chords
of their host segments.  When the four endpoint images sit on the
rectangle boundary the intersection exists precisely when the endpoint
pairs interleave along the boundary, which is checked first and
reported as an obstruction when it fails; the chord intersection itself
is then computed exactly.  Sub-chords between consecutive placed
vertices are parametrized at constant speed in disk coordinates, so v
restricted to a segment is injective by construction and continuous
across shared vertices and marked endpoints.

The final audit re-derives injectivity from the stored chord data alone
and measures the sup-norm deviation |v - u| along all segments; both
stay within sqrt(2) * eta because v and u never leave the shared closed
rectangle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arrival_grid import ArrivalGrid, MarkedSet, build_arrival_grid, marked_points
from .errors import GridInjectError
from .geometry import segment_intersection, separated
from .grids import Grid, GridSegment, build_grid
from .planar_maps import PlanarMap
from .tolerances import Tolerances

__all__ = [
    "rect_to_disk",
    "disk_to_rect",
    "rect_bounds",
    "InjectifiedSegment",
    "GridMap",
    "injectify",
    "verify_injective",
    "sup_error",
    "run_pipeline",
]


def rect_bounds(ag: ArrivalGrid, n: int, m: int) -> tuple:
    return (float(ag.x[n]), float(ag.y[m]), float(ag.x[n + 1]), float(ag.y[m + 1]))


def rect_to_disk(rect, pts: np.ndarray) -> np.ndarray:
    """Chart an arrival rectangle onto the unit disk."""
    x0, y0, x1, y1 = rect
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    v = np.column_stack(
        [2.0 * (pts[:, 0] - x0) / (x1 - x0) - 1.0, 2.0 * (pts[:, 1] - y0) / (y1 - y0) - 1.0]
    )
    ninf = np.max(np.abs(v), axis=1)
    n2 = np.linalg.norm(v, axis=1)
    scale = np.divide(ninf, n2, out=np.zeros_like(n2), where=n2 > 0)
    return v * scale[:, None]


def disk_to_rect(rect, q: np.ndarray) -> np.ndarray:
    x0, y0, x1, y1 = rect
    q = np.atleast_2d(np.asarray(q, dtype=float))
    ninf = np.max(np.abs(q), axis=1)
    n2 = np.linalg.norm(q, axis=1)
    scale = np.divide(n2, ninf, out=np.zeros_like(n2), where=ninf > 0)
    v = q * scale[:, None]
    return np.column_stack(
        [x0 + (v[:, 0] + 1.0) * (x1 - x0) / 2.0, y0 + (v[:, 1] + 1.0) * (y1 - y0) / 2.0]
    )


def _on_rect_boundary(rect, p, atol: float = 1e-9) -> bool:
    x0, y0, x1, y1 = rect
    x, y = float(p[0]), float(p[1])
    if not (x0 - atol <= x <= x1 + atol and y0 - atol <= y <= y1 + atol):
        return False
    edge = min(abs(x - x0), abs(x - x1), abs(y - y0), abs(y - y1))
    return edge <= atol


@dataclass
class InjectifiedSegment:
    line: tuple  # (orientation, line_index)
    coord: float
    span: tuple  # (p_lo, p_hi)
    id_lo: int
    id_hi: int
    kind: str  # "generalized" or "identity"
    rect: tuple | None = None  # (n, m)
    src: np.ndarray | None = None  # breakpoint source params, increasing
    disk: np.ndarray | None = None  # matching disk coordinates, (k, 2)
    vertices: list = field(default_factory=list)  # [(i, j)] in source order

    def source_points(self, params: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        o, _ = self.line
        if o == "v":
            return np.column_stack([np.full_like(params, self.coord), params])
        return np.column_stack([params, np.full_like(params, self.coord)])

    def eval(self, params: np.ndarray) -> np.ndarray:
        """The straightened map v along this segment."""
        params = np.asarray(params, dtype=float)
        if self.kind == "identity":
            return self.source_points(params)
        rect = self.rect_bounds
        idx = np.clip(np.searchsorted(self.src, params, side="right") - 1, 0, len(self.src) - 2)
        lo = self.src[idx]
        hi = self.src[idx + 1]
        frac = np.divide(params - lo, hi - lo, out=np.zeros_like(params), where=hi > lo)
        q = self.disk[idx] * (1.0 - frac[:, None]) + self.disk[idx + 1] * frac[:, None]
        return disk_to_rect(rect, q)

    @property
    def rect_bounds(self):
        return self._rect_bounds

    def to_dict(self) -> dict:
        params = np.union1d(np.linspace(self.span[0], self.span[1], 33), self.src if self.src is not None else [])
        return {
            "line": [self.line[0], int(self.line[1])],
            "coord": float(self.coord),
            "span": [float(self.span[0]), float(self.span[1])],
            "from": int(self.id_lo),
            "to": int(self.id_hi),
            "kind": self.kind,
            "rect": None if self.rect is None else [int(self.rect[0]), int(self.rect[1])],
            "breaks": None
            if self.src is None
            else {"source": self.src.tolist(), "disk": self.disk.tolist()},
            "vertices": [[int(i), int(j)] for i, j in self.vertices],
            "path": self.eval(params).tolist(),
        }


@dataclass
class GridMap:
    map_kind: str
    grid: Grid
    arrival: ArrivalGrid
    marked: MarkedSet
    segments: list
    vertex_images: dict  # (i, j) -> {"image", "disk", "rect"}
    report: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        verts = []
        for (i, j), rec in sorted(self.vertex_images.items()):
            verts.append(
                {
                    "i": int(i),
                    "j": int(j),
                    "point": [float(self.grid.s[i]), float(self.grid.t[j])],
                    "image": [float(rec["image"][0]), float(rec["image"][1])],
                    "rect": None if rec["rect"] is None else [int(rec["rect"][0]), int(rec["rect"][1])],
                }
            )
        return {
            "map": self.map_kind,
            "grid": self.grid.to_dict(),
            "arrival": self.arrival.to_dict(),
            "marked": [mp.to_dict() for mp in self.marked.points],
            "segments": [s.to_dict() for s in self.segments],
            "vertices": verts,
            "report": self.report,
        }


def _assign_rect(m: PlanarMap, seg, ag: ArrivalGrid, tol: Tolerances) -> tuple:
    """The single arrival rectangle containing the u-image of a segment."""
    res = int(tol["injectify.resolution"])
    params = np.linspace(seg.p_lo, seg.p_hi, res + 1)
    o, _ = seg.line
    pts = (
        np.column_stack([np.full_like(params, seg.coord), params])
        if o == "v"
        else np.column_stack([params, np.full_like(params, seg.coord)])
    )
    img = m.eval_many(pts)
    slack = 1e-7
    cell = []
    for axis, levels in ((0, ag.x), (1, ag.y)):
        lo, hi = img[:, axis].min(), img[:, axis].max()
        k = int(np.clip(np.searchsorted(levels, (lo + hi) / 2.0, side="right") - 1, 0, len(levels) - 2))
        if lo < levels[k] - slack or hi > levels[k + 1] + slack:
            raise GridInjectError(
                "rectangle-assignment-failed",
                "the image of a simple segment does not fit one arrival rectangle",
                line=[seg.line[0], seg.line[1]],
                span=[seg.p_lo, seg.p_hi],
                axis=axis,
                bbox=[lo, hi],
            )
        cell.append(k)
    return tuple(cell)


def injectify(
    m: PlanarMap,
    grid: Grid,
    ag: ArrivalGrid,
    marked: MarkedSet | None = None,
    tol: Tolerances | None = None,
) -> GridMap:
    """Build the straightened grid map v from the cut grid."""
    tol = tol or Tolerances()
    if marked is None:
        marked = marked_points(m, grid, ag, tol)
    by_id = {mp.id: mp for mp in marked.points}

    segs: list[InjectifiedSegment] = []
    host_of: dict[tuple, dict] = {}  # (i, j) -> {"v": seg, "h": seg}
    for s in marked.segments:
        inj = InjectifiedSegment(
            s.line, s.coord, (s.p_lo, s.p_hi), s.id_lo, s.id_hi, s.kind
        )
        if s.kind == "generalized":
            inj.rect = _assign_rect(m, s, ag, tol)
            inj._rect_bounds = rect_bounds(ag, *inj.rect)
            inj._vertex_params = sorted((p, (i, j)) for i, j, p in s.vertices)
            for _, ij in inj._vertex_params:
                host_of.setdefault(ij, {})[s.line[0]] = inj
        else:
            inj._rect_bounds = None
            inj._vertex_params = []
        segs.append(inj)

    # endpoint images in disk coordinates
    for inj in segs:
        if inj.kind != "generalized":
            continue
        ea = by_id[inj.id_lo].image
        eb = by_id[inj.id_hi].image
        inj._q_ends = rect_to_disk(inj.rect_bounds, np.vstack([ea, eb]))
        inj._img_ends = (ea, eb)
        inj._placed = []  # (source_param, chord_param, (i, j), vbar)

    K = grid.K
    for i in range(1, K):
        for j in range(1, K):
            hosts = host_of.get((i, j))
            if hosts is None or "v" not in hosts or "h" not in hosts:
                raise GridInjectError(
                    "rectangle-assignment-failed",
                    "an interior grid vertex is not interior to one v-host and one h-host",
                    vertex=[i, j],
                )
            vseg, hseg = hosts["v"], hosts["h"]
            if vseg.rect != hseg.rect:
                raise GridInjectError(
                    "rectangle-assignment-failed",
                    "the two host segments of a vertex land in different rectangles",
                    vertex=[i, j],
                    rects=[list(vseg.rect), list(hseg.rect)],
                )
            rect = vseg.rect_bounds
            e1, e3 = vseg._img_ends
            e2, e4 = hseg._img_ends
            if all(_on_rect_boundary(rect, e) for e in (e1, e2, e3, e4)):
                try:
                    consistent = separated(rect, e1, e3, e2, e4)
                except GridInjectError as exc:
                    raise GridInjectError(
                        "nc-obstruction",
                        "degenerate endpoint ordering on the rectangle boundary",
                        vertex=[i, j],
                        detail=exc.message,
                    ) from exc
                if not consistent:
                    raise GridInjectError(
                        "nc-obstruction",
                        "host endpoint images do not interleave on the rectangle boundary",
                        vertex=[i, j],
                        endpoints=[list(map(float, e)) for e in (e1, e2, e3, e4)],
                    )
            kind, data = segment_intersection(
                vseg._q_ends[0], vseg._q_ends[1], hseg._q_ends[0], hseg._q_ends[1]
            )
            if kind == "overlap":
                raise GridInjectError(
                    "degenerate-chords", "host chords are collinear", vertex=[i, j]
                )
            if kind != "point":
                raise GridInjectError(
                    "nc-obstruction",
                    "host chords do not intersect inside the disk",
                    vertex=[i, j],
                )
            vbar, t, u = data
            if not (1e-9 < t < 1.0 - 1e-9 and 1e-9 < u < 1.0 - 1e-9):
                raise GridInjectError(
                    "degenerate-chords",
                    "host chords meet at a chord endpoint",
                    vertex=[i, j],
                    params=[t, u],
                )
            pv = float(grid.t[j])
            ph = float(grid.s[i])
            vseg._placed.append((pv, t, (i, j), vbar))
            hseg._placed.append((ph, u, (i, j), vbar))

    vertex_images: dict = {}
    for inj in segs:
        if inj.kind != "generalized":
            inj.src = None
            inj.disk = None
            continue
        inj._placed.sort(key=lambda r: r[0])
        chord_params = [r[1] for r in inj._placed]
        if any(b - a <= 1e-12 for a, b in zip(chord_params, chord_params[1:])):
            raise GridInjectError(
                "nc-obstruction",
                "chord parameters do not increase with the source order",
                line=[inj.line[0], inj.line[1]],
                params=chord_params,
            )
        inj.src = np.array([inj.span[0]] + [r[0] for r in inj._placed] + [inj.span[1]])
        inj.disk = np.vstack(
            [inj._q_ends[0]] + [r[3] for r in inj._placed] + [inj._q_ends[1]]
        )
        inj.vertices = [r[2] for r in inj._placed]
        for _, _, ij, vbar in inj._placed:
            if ij not in vertex_images:
                img = disk_to_rect(inj.rect_bounds, vbar)[0]
                vertex_images[ij] = {"image": img, "disk": vbar, "rect": inj.rect}

    # boundary lattice vertices keep their marked images
    for mp in marked.points:
        if mp.kind != "lattice":
            continue
        si = np.nonzero(np.abs(grid.s - mp.point[0]) < 1e-12)[0]
        tj = np.nonzero(np.abs(grid.t - mp.point[1]) < 1e-12)[0]
        if len(si) and len(tj):
            ij = (int(si[0]), int(tj[0]))
            if ij not in vertex_images:
                vertex_images[ij] = {"image": mp.image, "disk": None, "rect": None}

    return GridMap(m.kind, grid, ag, marked, segs, vertex_images)


def verify_injective(gm: GridMap, tol: Tolerances | None = None) -> dict:
    """Audit the straightened map from the stored chord data alone.

    Chord interiors stay inside the open disk of their chart, hence inside
    the open arrival rectangle, so segments in different rectangles cannot
    meet except at shared marked images; those pairs are structural.  Same
    rectangle pairs are classified exactly: contact is legal only at a
    shared marked endpoint or at the placed image of a shared vertex.
    """
    violations = []
    pairs_checked = 0
    by_rect: dict[tuple, list] = {}
    n_gen = 0
    for idx, seg in enumerate(gm.segments):
        if seg.kind != "generalized":
            continue
        n_gen += 1
        by_rect.setdefault(seg.rect, []).append(idx)

    for rect_cell, idxs in by_rect.items():
        for a_pos in range(len(idxs)):
            for b_pos in range(a_pos + 1, len(idxs)):
                sa = gm.segments[idxs[a_pos]]
                sb = gm.segments[idxs[b_pos]]
                pairs_checked += 1
                # the breakpoints of a segment all lie on its single chord,
                # so one exact chord test covers the whole pair
                kind, data = segment_intersection(
                    sa.disk[0], sa.disk[-1], sb.disk[0], sb.disk[-1]
                )
                if kind == "empty":
                    continue
                if kind == "overlap":
                    violations.append(
                        {
                            "kind": "overlap",
                            "segments": [idxs[a_pos], idxs[b_pos]],
                            "rect": list(rect_cell),
                        }
                    )
                    continue
                pt, _, _ = data
                legal = False
                for mid in {sa.id_lo, sa.id_hi} & {sb.id_lo, sb.id_hi}:
                    q = rect_to_disk(sa.rect_bounds, gm.marked.points[mid].image)[0]
                    if np.linalg.norm(pt - q) <= 1e-9:
                        legal = True
                for ij in set(sa.vertices) & set(sb.vertices):
                    q = gm.vertex_images[ij]["disk"]
                    if np.linalg.norm(pt - q) <= 1e-9:
                        legal = True
                if not legal:
                    violations.append(
                        {
                            "kind": "crossing",
                            "segments": [idxs[a_pos], idxs[b_pos]],
                            "rect": list(rect_cell),
                            "point": disk_to_rect(sa.rect_bounds, pt)[0].tolist(),
                        }
                    )
    total_pairs = n_gen * (n_gen - 1) // 2
    return {
        "injective": not violations,
        "violations": violations,
        "pairs_checked": pairs_checked,
        "structural_pairs": total_pairs - pairs_checked,
    }


def sup_error(m: PlanarMap, gm: GridMap, tol: Tolerances | None = None) -> dict:
    """Sup-norm deviation between v and u along all grid segments."""
    tol = tol or Tolerances()
    res = int(tol["injectify.resolution"])
    worst = 0.0
    worst_at = None
    bound = 0.0
    for seg in gm.segments:
        params = np.linspace(seg.span[0], seg.span[1], res + 1)
        if seg.src is not None:
            params = np.union1d(params, seg.src)
        pts = seg.source_points(params)
        v_img = seg.eval(params)
        u_img = m.eval_many(pts)
        dev = np.linalg.norm(v_img - u_img, axis=1)
        k = int(np.argmax(dev))
        if dev[k] > worst:
            worst = float(dev[k])
            worst_at = pts[k].tolist()
        if seg.rect is not None:
            x0, y0, x1, y1 = seg.rect_bounds
            bound = max(bound, float(np.hypot(x1 - x0, y1 - y0)))
    return {"sup_error": worst, "argmax": worst_at, "rect_diameter_bound": bound}


def run_pipeline(
    m: PlanarMap, K: int, eta: float, seed: int = 0, tol: Tolerances | None = None
) -> GridMap:
    """Grid, arrival grid, marked points, straightening, and audit."""
    tol = tol or Tolerances()
    grid = build_grid(m, K, seed=seed, tol=tol)
    ag = build_arrival_grid(m, grid, eta, seed=seed, tol=tol)
    marked = marked_points(m, grid, ag, tol)
    gm = injectify(m, grid, ag, marked, tol)
    audit = verify_injective(gm, tol)
    dev = sup_error(m, gm, tol)
    gm.report = {
        "K": int(K),
        "eta": float(eta),
        "seed": int(seed),
        "injective": audit["injective"],
        "violations": audit["violations"],
        "pairs_checked": audit["pairs_checked"],
        "structural_pairs": audit["structural_pairs"],
        "sup_error": dev["sup_error"],
        "sup_error_at": dev["argmax"],
        "rect_diameter_bound": dev["rect_diameter_bound"],
        "n_marked": len(gm.marked.points),
        "n_segments": len(gm.segments),
    }
    return gm
