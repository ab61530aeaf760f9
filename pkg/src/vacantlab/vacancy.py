"""Vacant-set analytics at a fixed time: components, isolated segments,
giant-component and ubiquity events, surround events, covering paths.

All analytics are read-only functions of a VisitRecord (or of boolean
occupancy masks derived from one) and are deterministic: component ids are
assigned in increasing order of each component's smallest site index.

Grid convention: a flat site array reshaped to (side,)*dim puts lattice
axis 1 on the last grid axis (axis 1 varies fastest in the site index), so
lattice axis ``a`` (1-based) lives on grid axis ``dim - a``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ParameterError, VacantLabError
from .lattice import TorusGeometry, linf_distance_transform, segment_sites
from .walk import MultiWindowProbe, VisitRecord


@dataclass(frozen=True)
class VacancyView:
    """The vacant set of one walk at query time t: sites with first_visit > t."""

    record: VisitRecord
    t: int

    def __post_init__(self) -> None:
        if not 0 <= self.t <= self.record.final_time:
            raise ParameterError("query time outside the simulated horizon")

    @property
    def geometry(self) -> TorusGeometry:
        return self.record.geometry

    def vacant_mask(self) -> np.ndarray:
        return self.record.first_visit > self.t

    def vacant_count(self) -> int:
        return int(self.vacant_mask().sum())


# ---------------------------------------------------------------------------
# Cluster labeling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComponentLabeling:
    """Partition of the vacant sites into connected components.

    ``labels[site]`` is the component id (or -1 on occupied sites); ids are
    numbered 0..count-1 in increasing order of the component's smallest site
    index, which is also its representative.
    """

    geometry: TorusGeometry
    labels: np.ndarray
    count: int
    sizes: np.ndarray
    representatives: np.ndarray

    def sites_of(self, component_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == component_id)


class _LabelUnion:
    """Minimal union-find over positive label ids (path halving, min-root)."""

    def __init__(self, n: int):
        self.parent = list(range(n + 1))

    def find(self, x: int) -> int:
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def label_components(g: TorusGeometry, vacant: np.ndarray) -> ComponentLabeling:
    """Connected components of an arbitrary occupancy mask (True = in the set)."""
    mask = np.asarray(vacant, dtype=bool).reshape(-1)
    if mask.size != g.volume:
        raise ParameterError("mask length must equal the torus volume")
    if not mask.any():
        return ComponentLabeling(g, np.full(g.volume, -1, dtype=np.int64), 0,
                                 np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))

    shape = (g.side,) * g.dim
    grid = mask.reshape(shape)
    structure = ndimage.generate_binary_structure(g.dim, 1)
    raw, n_raw = ndimage.label(grid, structure=structure)

    # stitch the periodic faces: sites (..., side-1) border (..., 0)
    uf = _LabelUnion(n_raw)
    for grid_axis in range(g.dim):
        hi = np.take(raw, g.side - 1, axis=grid_axis).ravel()
        lo = np.take(raw, 0, axis=grid_axis).ravel()
        both = (hi > 0) & (lo > 0)
        for a, b in set(zip(hi[both].tolist(), lo[both].tolist())):
            uf.union(a, b)

    flat_raw = raw.reshape(-1)
    roots = np.fromiter((uf.find(i) for i in range(n_raw + 1)), dtype=np.int64,
                        count=n_raw + 1)
    rooted = roots[flat_raw]

    # canonical ids: order components by their smallest site index
    reps = np.full(n_raw + 1, g.volume, dtype=np.int64)
    np.minimum.at(reps, rooted[mask], np.flatnonzero(mask))
    live_roots = np.flatnonzero(reps < g.volume)
    order = np.argsort(reps[live_roots], kind="stable")
    live_roots = live_roots[order]
    remap = np.full(n_raw + 1, -1, dtype=np.int64)
    remap[live_roots] = np.arange(live_roots.size)

    labels = np.where(mask, remap[rooted], -1).astype(np.int64)
    sizes = np.bincount(labels[mask], minlength=live_roots.size).astype(np.int64)
    return ComponentLabeling(g, labels, int(live_roots.size), sizes,
                             reps[live_roots].astype(np.int64))


def components(view: VacancyView) -> ComponentLabeling:
    """Cluster labeling of the vacant set at the view's query time."""
    return label_components(view.geometry, view.vacant_mask())


@dataclass(frozen=True)
class SizeHistogram:
    counts: dict[int, int]
    largest: int
    second_largest: int


def component_size_histogram(labeling: ComponentLabeling) -> SizeHistogram:
    """Exact component-size histogram plus the two largest sizes."""
    if labeling.count == 0:
        return SizeHistogram({}, 0, 0)
    values, freq = np.unique(labeling.sizes, return_counts=True)
    ordered = np.sort(labeling.sizes)[::-1]
    second = int(ordered[1]) if ordered.size > 1 else 0
    return SizeHistogram({int(v): int(c) for v, c in zip(values, freq)},
                         int(ordered[0]), second)


# ---------------------------------------------------------------------------
# Grid mask helpers
# ---------------------------------------------------------------------------

def _grid(g: TorusGeometry, mask: np.ndarray) -> np.ndarray:
    return np.asarray(mask, dtype=bool).reshape((g.side,) * g.dim)


def _grid_axis(g: TorusGeometry, lattice_axis: int) -> int:
    return g.dim - lattice_axis


def _windowed_and(grid: np.ndarray, window: int, grid_axis: int, side: int) -> np.ndarray:
    """out[x] = AND of grid over the window {x, x+e, ..., x+(window-1)e} (wrapped)."""
    window = min(window, side)
    acc = grid.copy()
    for k in range(1, window):
        acc &= np.roll(grid, -k, axis=grid_axis)
    return acc


def _surrounded_anchors(g: TorusGeometry, segment_free: np.ndarray,
                        boundary_covered: np.ndarray, seg_len: int) -> np.ndarray:
    """Anchors x whose e1-segment of length seg_len is entirely in
    `segment_free` while its full outer boundary is in `boundary_covered`."""
    ga1 = _grid_axis(g, 1)
    seg_grid = _grid(g, segment_free)
    cov_grid = _grid(g, boundary_covered)
    ok = _windowed_and(seg_grid, seg_len + 1, ga1, g.side)
    ok = ok & np.roll(cov_grid, 1, axis=ga1)                    # x - e1
    ok = ok & np.roll(cov_grid, -(seg_len + 1), axis=ga1)       # x + (len+1) e1
    for axis in range(2, g.dim + 1):
        ga = _grid_axis(g, axis)
        for s in (1, -1):
            side_row = np.roll(cov_grid, -s, axis=ga)           # x + s e_axis
            ok = ok & _windowed_and(side_row, seg_len + 1, ga1, g.side)
    return ok.reshape(-1)


def vacant_segment_anchor_mask(g: TorusGeometry, free_mask: np.ndarray, seg_len: int,
                               axis: int = 1) -> np.ndarray:
    """Anchors whose wrapped axis segment of length seg_len lies in `free_mask`."""
    if seg_len < 0:
        raise ParameterError("segment length must be >= 0")
    ga = _grid_axis(g, axis)
    return _windowed_and(_grid(g, free_mask), min(seg_len + 1, g.side),
                         ga, g.side).reshape(-1)


# ---------------------------------------------------------------------------
# Isolated segment components
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SegmentComponentRecord:
    """A vacant axis segment whose entire boundary has been visited."""

    anchor: int
    axis: int
    length: int


def _check_segment_length(g: TorusGeometry, seg_len: int) -> None:
    if seg_len < 0:
        raise ParameterError("segment length must be >= 0")
    if seg_len + 2 > g.side:
        raise ParameterError(
            "segment length + 2 exceeds the side: the boundary would wrap onto the segment")


def segment_components_along(view: VacancyView, seg_len: int, axis: int,
                             verify: bool = True) -> list[SegmentComponentRecord]:
    """Anchors whose axis-aligned vacant segment has a fully visited boundary.

    Equivalent characterization (checked when ``verify``): the segment is
    exactly one connected component of the vacant set.
    """
    g = view.geometry
    _check_segment_length(g, seg_len)
    if not 1 <= axis <= g.dim:
        raise ParameterError(f"axis must be in 1..{g.dim}")

    vac = view.vacant_mask()
    if axis == 1:
        anchors_mask = _surrounded_anchors(g, vac, ~vac, seg_len)
    else:
        # reuse the e1 machinery by swapping the roles of the two axes
        perm = list(range(g.dim))
        ga1, gax = _grid_axis(g, 1), _grid_axis(g, axis)
        perm[ga1], perm[gax] = perm[gax], perm[ga1]
        vg = _grid(g, vac).transpose(perm)
        og = (~_grid(g, vac)).transpose(perm)
        ok = _windowed_and(vg, seg_len + 1, g.dim - 1, g.side)
        ok &= np.roll(og, 1, axis=g.dim - 1)
        ok &= np.roll(og, -(seg_len + 1), axis=g.dim - 1)
        for other in range(g.dim):
            if other == g.dim - 1:
                continue
            for s in (1, -1):
                ok &= _windowed_and(np.roll(og, -s, axis=other), seg_len + 1,
                                    g.dim - 1, g.side)
        anchors_mask = ok.transpose(np.argsort(perm)).reshape(-1)

    anchors = np.flatnonzero(anchors_mask)
    records = [SegmentComponentRecord(int(a), axis, seg_len) for a in anchors]
    if verify and records:
        labeling = components(view)
        for rec in records:
            seg = segment_sites(g, rec.anchor, axis, seg_len)
            comp = labeling.sites_of(int(labeling.labels[rec.anchor]))
            if not np.array_equal(np.sort(seg.indices()), comp):
                raise VacantLabError(
                    "segment/component characterizations disagree; labeling is inconsistent")
    return records


def segment_components(view: VacancyView, seg_len: int,
                       verify: bool = True) -> list[SegmentComponentRecord]:
    """Isolated vacant e1-segments of the given length (anchors, sorted)."""
    return segment_components_along(view, seg_len, 1, verify=verify)


# ---------------------------------------------------------------------------
# Giant component event
# ---------------------------------------------------------------------------

class GiantOutcome(str, Enum):
    EVENT_HOLDS = "EVENT_HOLDS"
    NOT_UNIQUE = "NOT_UNIQUE"
    NO_QUALIFYING_SEGMENT = "NO_QUALIFYING_SEGMENT"
    NOT_DENSE = "NOT_DENSE"


@dataclass(frozen=True)
class GiantReport:
    qualifying_segment_count: int
    unique: bool
    component_id: int | None
    size: int
    beta_dense: bool
    outcome: GiantOutcome


def _vacant_run_grids(g: TorusGeometry, vac: np.ndarray) -> list[np.ndarray]:
    """Circular vacant-run length starting at each site, one grid per axis."""
    out = []
    side = g.side
    for axis in range(1, g.dim + 1):
        ga = _grid_axis(g, axis)
        v = np.moveaxis(_grid(g, vac), ga, -1)
        doubled = np.concatenate([v, v], axis=-1)
        runs = np.zeros(doubled.shape, dtype=np.int64)
        runs[..., -1] = doubled[..., -1]
        for i in range(2 * side - 2, -1, -1):
            runs[..., i] = np.where(doubled[..., i], runs[..., i + 1] + 1, 0)
        starts = np.minimum(runs[..., :side], side)
        out.append(np.moveaxis(starts, -1, ga))
    return out


def giant_component(view: VacancyView, giant_len: int, reach_exp: float) -> GiantReport:
    """Evaluate the giant-component event at the view's time.

    Qualifying segments are anchor/axis pairs whose wrapped segment of length
    ``giant_len`` is entirely vacant (found by per-line run scans).  The event
    holds when all of them sit in one component that is within
    side**reach_exp of every site.
    """
    g = view.geometry
    if not 1 <= giant_len <= g.side:
        raise ParameterError("giant segment length must be in 1..side")
    if not 0 < reach_exp < 1:
        raise ParameterError("reach exponent must lie in (0, 1)")

    vac = view.vacant_mask()
    need = min(giant_len + 1, g.side)
    run_grids = _vacant_run_grids(g, vac)
    qualifying = 0
    anchor_union = np.zeros(g.volume, dtype=bool)
    for runs in run_grids:
        ok = (runs.reshape(-1) >= need)
        qualifying += int(ok.sum())
        anchor_union |= ok

    if qualifying == 0:
        return GiantReport(0, False, None, 0, False, GiantOutcome.NO_QUALIFYING_SEGMENT)

    labeling = components(view)
    ids = np.unique(labeling.labels[anchor_union])
    if ids.size > 1:
        return GiantReport(qualifying, False, None, 0, False, GiantOutcome.NOT_UNIQUE)

    comp_id = int(ids[0])
    size = int(labeling.sizes[comp_id])
    dist = linf_distance_transform(g, labeling.labels == comp_id)
    dense = bool(dist.max() <= g.side**reach_exp)
    outcome = GiantOutcome.EVENT_HOLDS if dense else GiantOutcome.NOT_DENSE
    return GiantReport(qualifying, True, comp_id, size, dense, outcome)


# ---------------------------------------------------------------------------
# Ubiquity event
# ---------------------------------------------------------------------------

def ubiquity(view: VacancyView, seg_len: int, reach_exp: float) -> bool:
    """True when every site sees, along every axis, a fully vacant segment of
    length seg_len starting within side**reach_exp of it.

    Run-length preprocessing plus a next-hit sweep keeps this O(dim * volume)
    instead of the cubic triple loop.
    """
    g = view.geometry
    if seg_len < 1:
        raise ParameterError("segment length must be >= 1")
    if reach_exp <= 0:
        raise ParameterError("reach exponent must be > 0")
    reach = min(math.ceil(g.side**reach_exp), g.side)
    vac = view.vacant_mask()
    need = min(seg_len + 1, g.side)
    side = g.side
    for axis, runs in enumerate(_vacant_run_grids(g, vac), start=1):
        ga = _grid_axis(g, axis)
        ok = np.moveaxis(runs, ga, -1) >= need
        doubled = np.concatenate([ok, ok], axis=-1)
        gap = np.full(doubled.shape, 2 * side, dtype=np.int64)
        gap[..., -1] = np.where(doubled[..., -1], 0, 2 * side)
        for i in range(2 * side - 2, -1, -1):
            gap[..., i] = np.where(doubled[..., i], 0, gap[..., i + 1] + 1)
        if not bool((gap[..., :side] < reach).all()):
            return False
    return True


# ---------------------------------------------------------------------------
# Surround events over time windows
# ---------------------------------------------------------------------------

def surround_windows(horizon: int, window_len: int) -> list[tuple[int, int]]:
    """Per-window coverage intervals [(i-1)w, (i-1)w + w//2] for i = 1..[horizon/w]."""
    if window_len < 1 or horizon < window_len:
        raise ParameterError("need 1 <= window_len <= horizon")
    return [((i - 1) * window_len, (i - 1) * window_len + window_len // 2)
            for i in range(1, horizon // window_len + 1)]


def make_surround_probe(g: TorusGeometry, horizon: int, window_len: int) -> MultiWindowProbe:
    """Streaming probe capturing the half-window visited bitmaps."""
    return MultiWindowProbe(g, surround_windows(horizon, window_len))


def detect_surround_events(record: VisitRecord, probe: MultiWindowProbe,
                           window_len: int, seg_len: int,
                           restrict_candidates: bool = True,
                           ) -> tuple[list[int], dict[int, SegmentComponentRecord]]:
    """Windows in which the walk fenced in a vacant e1-segment.

    Window i (1-based) is reported when some anchor's segment boundary was
    fully visited during the first half of the window while the segment
    itself stayed unvisited through the whole window's end.  With
    ``restrict_candidates`` the anchor scan only examines anchors whose
    predecessor site x - e1 was visited in the half window (a necessary
    condition, so the result is identical).
    """
    g = record.geometry
    _check_segment_length(g, seg_len)
    windows = surround_windows(record.final_time, window_len)
    if len(probe.windows) != len(windows):
        raise ParameterError("probe does not match the window layout")

    ga1 = _grid_axis(g, 1)
    indices: list[int] = []
    witnesses: dict[int, SegmentComponentRecord] = {}
    for i, (w_start, _) in enumerate(windows, start=1):
        covered = probe.visited(i - 1)
        unvisited = record.first_visit > i * window_len
        anchors_mask = _surrounded_anchors(g, unvisited, covered, seg_len)
        if restrict_candidates:
            candidates = np.roll(_grid(g, covered), 1, axis=ga1).reshape(-1)
            anchors_mask = anchors_mask & candidates
        anchors = np.flatnonzero(anchors_mask)
        if anchors.size:
            indices.append(i)
            witnesses[i] = SegmentComponentRecord(int(anchors[0]), 1, seg_len)
    return indices, witnesses


# ---------------------------------------------------------------------------
# Covering path
# ---------------------------------------------------------------------------

def covering_path(g: TorusGeometry, seg_len: int, anchor: int = 0,
                  start: int | None = None) -> np.ndarray:
    """A nearest-neighbor path that covers the boundary of the e1-segment at
    `anchor` without ever stepping on the segment.

    The path concatenates one rectangular loop per axis 2..dim around the
    segment, prefixed by a connector (at most 2*seg_len+8 steps) from `start`
    to the -e1 end cap; each loop has 2*seg_len+8 steps, so the total is at
    most dim*(2*seg_len+8) steps.  Loop corners such as -e1+e2 are one step
    diagonal to the segment: they are not boundary sites themselves (the
    boundary's end caps have no boundary neighbors, so no boundary-only
    nearest-neighbor path exists) but they never touch the segment.
    """
    _check_segment_length(g, seg_len)
    if g.dim < 2:
        raise ParameterError("covering path needs dim >= 2")

    def loop_coords(axis: int) -> list[np.ndarray]:
        # closed loop through the (e1, e_axis) plane, from -e1 back to -e1
        pts: list[np.ndarray] = []

        def at(x1: int, xa: int) -> np.ndarray:
            c = np.zeros(g.dim, dtype=np.int64)
            c[0] = x1
            c[axis - 1] = xa
            return c

        pts.append(at(-1, 0))
        for x1 in range(-1, seg_len + 2):
            pts.append(at(x1, 1))
        pts.append(at(seg_len + 1, 0))
        for x1 in range(seg_len + 1, -2, -1):
            pts.append(at(x1, -1))
        pts.append(at(-1, 0))
        return pts

    loops = {axis: loop_coords(axis) for axis in range(2, g.dim + 1)}

    anchor_coords = g.decode(np.int64(anchor))
    connector: list[np.ndarray] = []
    if start is not None:
        rel = (g.decode(np.int64(start)) - anchor_coords) % g.side
        # fold wrapped coordinates back into the loop frame: axis 1 ranges
        # over [-1, seg_len+1], the other axes over [-1, 1]
        rel[0] = rel[0] - g.side if rel[0] > seg_len + 1 else rel[0]
        rel[1:] = np.where(rel[1:] > 1, rel[1:] - g.side, rel[1:])
        found = None
        if not np.array_equal(rel, loops[2][0]):  # already at the -e1 cap
            for axis in range(2, g.dim + 1):
                for pos, c in enumerate(loops[axis][1:-1], start=1):
                    if np.array_equal(c, rel):
                        found = loops[axis][pos:]
                        break
                if found is not None:
                    break
            if found is None:
                raise ParameterError("start must lie on the segment boundary")
            connector = found[:-1]  # up to but not including the final -e1

    path_rel: list[np.ndarray] = list(connector)
    for axis in range(2, g.dim + 1):
        body = loops[axis] if axis == 2 else loops[axis][1:]  # skip repeated -e1
        path_rel.extend(body)
    coords = (np.stack(path_rel) + anchor_coords) % g.side
    path = g.encode(coords)

    seg = segment_sites(g, anchor, 1, seg_len)
    if bool(seg.contains(path).any()):
        raise VacantLabError("covering path construction touched the segment")
    return path


def covering_path_step_bound(dim: int, seg_len: int) -> int:
    """The guaranteed step bound dim*(2*seg_len+8)."""
    return dim * (2 * seg_len + 8)


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def segment_records_csv(g: TorusGeometry, records: Sequence[SegmentComponentRecord]) -> str:
    out = io.StringIO()
    out.write("anchor_index,anchor_coords,direction,length\n")
    for rec in records:
        coords = " ".join(str(int(c)) for c in g.decode(np.int64(rec.anchor)))
        out.write(f"{rec.anchor},{coords},{rec.axis},{rec.length}\n")
    return out.getvalue()


def histogram_csv(hist: SizeHistogram) -> str:
    out = io.StringIO()
    out.write("size,count\n")
    for size in sorted(hist.counts):
        out.write(f"{size},{hist.counts[size]}\n")
    return out.getvalue()
