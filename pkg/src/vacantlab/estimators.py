"""Seeded Monte Carlo estimation of the vacancy events.

An ExperimentSpec pins everything a run depends on; replica ``i`` of a run
always uses the stream seed ``stream_seed(master_seed, i)``, so estimates are
byte-stable, shards of a run can be computed anywhere, and merging shard
reports reproduces the monolithic run exactly.

Event probabilities are reported with 95% Wilson score intervals (the
estimates are plain Bernoulli frequencies; interval choice documented here).
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from . import constants
from .errors import ParameterError, ResourceLimitError
from .greenfn import _solve_columns  # deterministic solver with residual check
from .lattice import TorusGeometry, segment_sites
from .rng import stream_seed
from .vacancy import (
    VacancyView,
    GiantOutcome,
    detect_surround_events,
    giant_component,
    make_surround_probe,
    segment_components,
    ubiquity,
    vacant_segment_anchor_mask,
)
from .walk import (
    NEVER,
    VisitRecord,
    WalkConfig,
    check_excursion_radii,
    iter_positions,
    simulate,
)

WILSON_Z = 1.959963984540054  # two-sided 95%

EVENT_KINDS = ("J_COUNT_GE", "DISJOINT_RANGES", "UBIQUITY", "A_COUNT_GE",
               "GAMMA_GE_1", "GIANT", "THEOREM")

MAX_HORIZON = 2**62


@dataclass(frozen=True)
class ExperimentSpec:
    """Full parameter set of one experiment (geometry, event knobs, seeding)."""

    dim: int
    side: int
    steps_per_site: float          # walk horizon = [steps_per_site * side**dim]
    seg_len: int                   # isolated-segment length (explicit at desk scale)
    giant_len: int                 # qualifying-segment length of the giant event
    reach_exp: float               # density/ubiquity exponent in (0, 1)
    count_exp: float = 0.5         # target-count exponent (scale ladder input)
    budget_coeff: float = 1.0      # excursion budget coefficient
    replications: int = 100
    master_seed: int = 0
    start: int | None = None       # fixed start site, or None for uniform

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise ParameterError("replications must be >= 1")
        if self.steps_per_site <= 0:
            raise ParameterError("steps_per_site must be > 0")
        if not 0 < self.reach_exp < 1:
            raise ParameterError("reach_exp must lie in (0, 1)")
        if self.seg_len < 0 or self.giant_len < 1:
            raise ParameterError("need seg_len >= 0 and giant_len >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ParameterError("master_seed must fit in 64 bits")
        if constants.full_horizon(self.side, self.dim, self.steps_per_site) >= MAX_HORIZON:
            raise ParameterError("horizon does not fit the time type")
        # geometry validation happens here too
        self.geometry()

    def geometry(self) -> TorusGeometry:
        return TorusGeometry(self.dim, self.side)

    def horizon(self) -> int:
        return constants.full_horizon(self.side, self.dim, self.steps_per_site)

    def scales(self) -> constants.ScaleSet:
        return constants.derive_scales(self.side, self.dim, self.steps_per_site,
                                       self.count_exp, self.budget_coeff)

    def replica_seed(self, index: int) -> int:
        return stream_seed(self.master_seed, index)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(**d)


@dataclass(frozen=True)
class EventSpec:
    """One event to estimate; unset fields fall back to the spec's scale ladder."""

    kind: str
    k: int | None = None               # count threshold (J_COUNT_GE, A_COUNT_GE)
    t: int | None = None               # evaluation time
    gap: int | None = None             # DISJOINT_RANGES separation (default: revisit gap)
    seg_len: int | None = None         # segment-length override
    reach_exp: float | None = None     # exponent override
    window_len: int | None = None      # A-event window (default: window_len scale)
    horizon: int | None = None         # walk horizon (default: full horizon)
    anchors: tuple[int, ...] | None = None  # GAMMA_GE_1 site list; None = segments at early horizon

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ParameterError(f"unknown event kind {self.kind!r}; expected one of {EVENT_KINDS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["anchors"] is not None:
            d["anchors"] = list(d["anchors"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EventSpec":
        d = dict(d)
        if d.get("anchors") is not None:
            d["anchors"] = tuple(d["anchors"])
        return cls(**d)


@dataclass(frozen=True)
class ResolvedEvent:
    """EventSpec with every default filled in; what a replica actually runs."""

    kind: str
    horizon: int
    t: int
    k: int = 0
    gap: int = 0
    seg_len: int = 0
    giant_len: int = 0
    reach_exp: float = 0.5
    window_len: int = 0
    early_horizon: int = 0
    anchors: tuple[int, ...] | None = None


def resolve_event(spec: ExperimentSpec, event: EventSpec) -> ResolvedEvent:
    """Fill event defaults from the spec and validate against the lattice."""
    g = spec.geometry()
    kind = event.kind
    seg_len = spec.seg_len if event.seg_len is None else event.seg_len
    reach = spec.reach_exp if event.reach_exp is None else event.reach_exp
    full = spec.horizon()

    def scales() -> constants.ScaleSet:
        return spec.scales()

    if kind == "J_COUNT_GE":
        if event.k is None or event.k < 1:
            raise ParameterError("J_COUNT_GE needs a count threshold k >= 1")
        t = scales().early_horizon if event.t is None else event.t
        horizon = t if event.horizon is None else event.horizon
        if seg_len + 2 > g.side:
            raise ParameterError("segment length + 2 exceeds the side")
        return ResolvedEvent(kind, horizon, t, k=event.k, seg_len=seg_len)
    if kind == "DISJOINT_RANGES":
        t = scales().early_horizon if event.t is None else event.t
        gap = scales().revisit_gap if event.gap is None else event.gap
        if gap < 0:
            raise ParameterError("gap must be >= 0")
        return ResolvedEvent(kind, t, t, gap=gap)
    if kind == "UBIQUITY":
        if seg_len < 1:
            raise ParameterError("UBIQUITY needs a segment length >= 1")
        t = full if event.t is None else event.t
        return ResolvedEvent(kind, t, t, seg_len=seg_len, reach_exp=reach)
    if kind == "A_COUNT_GE":
        if event.k is None or event.k < 1:
            raise ParameterError("A_COUNT_GE needs a count threshold k >= 1")
        horizon = scales().early_horizon if event.horizon is None else event.horizon
        window = scales().window_len if event.window_len is None else event.window_len
        if not 1 <= window <= horizon:
            raise ParameterError("need 1 <= window_len <= horizon")
        if seg_len + 2 > g.side:
            raise ParameterError("segment length + 2 exceeds the side")
        return ResolvedEvent(kind, horizon, horizon, k=event.k, seg_len=seg_len,
                             window_len=window)
    if kind == "GAMMA_GE_1":
        horizon = full if event.horizon is None else event.horizon
        anchors = event.anchors
        early = 0
        if anchors is None:
            early = scales().early_horizon
            if early > horizon:
                raise ParameterError("early horizon exceeds the walk horizon")
            if seg_len + 2 > g.side:
                raise ParameterError("segment length + 2 exceeds the side")
        else:
            if len(anchors) == 0:
                raise ParameterError("anchor list must be nonempty (or None)")
            if seg_len + 1 > g.side:
                raise ParameterError("segment length exceeds the side")
            bad = [a for a in anchors if not 0 <= a < g.volume]
            if bad:
                raise ParameterError(f"anchor {bad[0]} out of range")
        return ResolvedEvent(kind, horizon, horizon, seg_len=seg_len,
                             early_horizon=early, anchors=anchors)
    if kind == "GIANT":
        t = full if event.t is None else event.t
        if not 1 <= spec.giant_len <= g.side:
            raise ParameterError("giant segment length must be in 1..side")
        return ResolvedEvent(kind, t, t, giant_len=spec.giant_len, reach_exp=reach)
    if kind == "THEOREM":
        t = full if event.t is None else event.t
        if not 1 <= spec.giant_len <= g.side:
            raise ParameterError("giant segment length must be in 1..side")
        if seg_len + 1 > g.side:
            raise ParameterError("segment length exceeds the side")
        return ResolvedEvent(kind, t, t, seg_len=seg_len, giant_len=spec.giant_len,
                             reach_exp=reach)
    raise ParameterError(f"unknown event kind {kind!r}")


# ---------------------------------------------------------------------------
# Per-replica evaluation
# ---------------------------------------------------------------------------

def count_gamma(record: VisitRecord, s: int, t: int, anchors: Sequence[int],
                seg_len: int, window_visited: np.ndarray | None = None) -> int:
    """Number of anchors whose e1-segment is untouched by the walk during [s, t].

    With s = 0 (or t = final_time) the visit maps decide membership exactly;
    interior windows need the visited bitmap of a streaming window probe.
    """
    g = record.geometry
    if not 0 <= s <= t <= record.final_time:
        raise ParameterError("need 0 <= s <= t <= final_time")
    if seg_len + 1 > g.side:
        raise ParameterError("segment length exceeds the side")
    anchors = np.asarray(list(anchors), dtype=np.int64)
    if anchors.size == 0:
        return 0
    if window_visited is not None:
        visited = np.asarray(window_visited, dtype=bool)
    elif s == 0:
        visited = record.first_visit <= t
    elif t == record.final_time:
        visited = record.visited_since(s)
    else:
        raise ParameterError(
            "interior windows need a window probe (pass window_visited)")
    clean = vacant_segment_anchor_mask(g, ~visited, seg_len)
    return int(clean[anchors].sum())


def _evaluate_event(spec: ExperimentSpec, resolved: ResolvedEvent, seed: int) -> bool:
    g = spec.geometry()
    cfg = WalkConfig(seed=seed, horizon=resolved.horizon, start=spec.start)
    kind = resolved.kind

    if kind == "A_COUNT_GE":
        probe = make_surround_probe(g, resolved.horizon, resolved.window_len)
        record = simulate(g, cfg, probes=[probe])
        indices, _ = detect_surround_events(record, probe, resolved.window_len,
                                            resolved.seg_len)
        return len(indices) >= resolved.k

    record = simulate(g, cfg)

    if kind == "J_COUNT_GE":
        found = segment_components(VacancyView(record, resolved.t), resolved.seg_len)
        return len(found) >= resolved.k
    if kind == "DISJOINT_RANGES":
        visited = record.first_visit != NEVER
        if resolved.gap == 0:
            return not visited.any()
        spans = record.last_visit[visited] - record.first_visit[visited]
        return not bool((spans >= resolved.gap).any())
    if kind == "UBIQUITY":
        return ubiquity(VacancyView(record, resolved.t), resolved.seg_len,
                        resolved.reach_exp)
    if kind == "GAMMA_GE_1":
        if resolved.anchors is not None:
            return count_gamma(record, 0, resolved.horizon, resolved.anchors,
                               resolved.seg_len) >= 1
        early = segment_components(VacancyView(record, resolved.early_horizon),
                                   resolved.seg_len)
        if not early:
            return False
        anchors = [r.anchor for r in early]
        return count_gamma(record, resolved.early_horizon, resolved.horizon,
                           anchors, resolved.seg_len) >= 1
    if kind == "GIANT":
        report = giant_component(VacancyView(record, resolved.t), resolved.giant_len,
                                 resolved.reach_exp)
        return report.outcome == GiantOutcome.EVENT_HOLDS
    if kind == "THEOREM":
        view = VacancyView(record, resolved.t)
        report = giant_component(view, resolved.giant_len, resolved.reach_exp)
        if report.outcome != GiantOutcome.EVENT_HOLDS:
            return False
        from .vacancy import components as _components
        labeling = _components(view)
        anchors = np.flatnonzero(
            vacant_segment_anchor_mask(g, view.vacant_mask(), resolved.seg_len))
        return bool((labeling.labels[anchors] != report.component_id).any())
    raise ParameterError(f"unknown event kind {kind!r}")


def _evaluate_chunk(spec_dict: dict, event_dict: dict, indices: list[int]) -> int:
    """Worker entry point: evaluate one chunk of replicas, return the success count."""
    spec = ExperimentSpec.from_dict(spec_dict)
    resolved = resolve_event(spec, EventSpec.from_dict(event_dict))
    hits = 0
    for i in indices:
        hits += bool(_evaluate_event(spec, resolved, spec.replica_seed(i)))
    return hits


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def wilson_ci(successes: int, trials: int, z: float = WILSON_Z) -> tuple[float, float]:
    """95% Wilson score interval for a Bernoulli proportion."""
    if trials < 0 or not 0 <= successes <= trials:
        raise ParameterError("need 0 <= successes <= trials")
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials))
    lo = 0.0 if successes == 0 else max(0.0, center - half)       # exact at the edge
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return lo, hi


def _seeds_digest(spec: ExperimentSpec, ranges: Sequence[tuple[int, int]]) -> str:
    h = hashlib.sha256()
    for offset, count in sorted(ranges):
        for i in range(offset, offset + count):
            h.update(spec.replica_seed(i).to_bytes(8, "little"))
    return h.hexdigest()


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate + Wilson interval + replication metadata for one event."""

    event: dict
    spec: dict
    successes: int
    trials: int
    estimate: float
    ci_low: float
    ci_high: float
    replica_ranges: tuple[tuple[int, int], ...]   # (offset, count) shards
    seeds_digest: str
    wall_seconds: float = 0.0                     # excluded from the canonical form

    def canonical_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_seconds")
        d["replica_ranges"] = [list(r) for r in self.replica_ranges]
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateReport":
        d = dict(d)
        d["replica_ranges"] = tuple(tuple(r) for r in d["replica_ranges"])
        d.setdefault("wall_seconds", 0.0)
        return cls(**d)


def _coalesce(ranges: Sequence[tuple[int, int]]) -> tuple[tuple[int, int], ...]:
    """Sort shard ranges and fuse contiguous ones, so a merged report of
    adjacent shards is byte-identical to the monolithic run's report."""
    merged: list[list[int]] = []
    for offset, count in sorted(tuple(r) for r in ranges):
        if merged and merged[-1][0] + merged[-1][1] == offset:
            merged[-1][1] += count
        else:
            merged.append([offset, count])
    return tuple((o, c) for o, c in merged)


def _build_report(spec: ExperimentSpec, event: EventSpec, successes: int,
                  ranges: Sequence[tuple[int, int]], wall: float) -> EstimateReport:
    trials = sum(c for _, c in ranges)
    lo, hi = wilson_ci(successes, trials)
    return EstimateReport(
        event=event.to_dict(),
        spec=spec.to_dict(),
        successes=successes,
        trials=trials,
        estimate=successes / trials if trials else 0.0,
        ci_low=lo,
        ci_high=hi,
        replica_ranges=_coalesce(ranges),
        seeds_digest=_seeds_digest(spec, ranges),
        wall_seconds=wall,
    )


def estimate_event(spec: ExperimentSpec, event: EventSpec, workers: int = 1,
                   replica_offset: int = 0, replica_count: int | None = None,
                   ) -> EstimateReport:
    """Estimate one event probability over seeded replicas.

    ``replica_offset/replica_count`` select a shard of the spec's replica
    index space (defaults: all of it); shard reports merge exactly into the
    monolithic report.
    """
    count = spec.replications if replica_count is None else replica_count
    if count < 1 or replica_offset < 0:
        raise ParameterError("need replica_count >= 1 and replica_offset >= 0")
    resolved = resolve_event(spec, event)       # fail fast on bad parameters
    del resolved
    indices = list(range(replica_offset, replica_offset + count))
    started = time.monotonic()
    if workers <= 1 or count == 1:
        successes = _evaluate_chunk(spec.to_dict(), event.to_dict(), indices)
    else:
        chunk = max(1, math.ceil(count / (4 * workers)))
        parts = [indices[i:i + chunk] for i in range(0, count, chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_evaluate_chunk, spec.to_dict(), event.to_dict(), p)
                       for p in parts]
            successes = sum(f.result() for f in futures)
    wall = time.monotonic() - started
    return _build_report(spec, event, successes, [(replica_offset, count)], wall)


def merge_reports(reports: Sequence[EstimateReport]) -> EstimateReport:
    """Merge shard reports of one experiment (associative and commutative)."""
    if not reports:
        raise ParameterError("nothing to merge")
    head = reports[0]
    for other in reports[1:]:
        for fieldname in ("spec", "event"):
            a, b = getattr(head, fieldname), getattr(other, fieldname)
            if a != b:
                diff = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
                raise ParameterError(
                    f"cannot merge: {fieldname} field(s) {diff} differ between shards")
    ranges: list[tuple[int, int]] = []
    for r in reports:
        ranges.extend(r.replica_ranges)
    ranges.sort()
    for (o1, c1), (o2, _) in zip(ranges, ranges[1:]):
        if o1 + c1 > o2:
            raise ParameterError(f"cannot merge: replica ranges overlap at offset {o2}")
    spec = ExperimentSpec.from_dict(head.spec)
    successes = sum(r.successes for r in reports)
    wall = sum(r.wall_seconds for r in reports)
    event = EventSpec.from_dict(head.event)
    return _build_report(spec, event, successes, ranges, wall)


# ---------------------------------------------------------------------------
# Survival of one segment across excursions
# ---------------------------------------------------------------------------

class SurvivalTracker:
    """Streaming decision of {segment unhit before the budget-th departure}.

    Feed blocks in time order; ``decided`` flips once either the segment is
    hit (failure for every budget not yet reached) or the target number of
    departures completes first (success).  Departure times are recorded so
    nested budgets can be read off one run.
    """

    def __init__(self, g: TorusGeometry, anchor: int, seg_len: int,
                 inner_radius: int, outer_radius: int, budget: int):
        check_excursion_radii(g, inner_radius, outer_radius)
        self.g = g
        self.center = anchor
        self.segment = segment_sites(g, anchor, 1, seg_len)
        self.inner = inner_radius
        self.outer = outer_radius
        self.budget = budget
        self.departures: list[int] = []
        self.hit_time: int | None = None
        self.seeking_return = True

    @property
    def decided(self) -> bool:
        if self.budget == 0:
            return True
        return self.hit_time is not None or len(self.departures) >= self.budget

    @property
    def survived(self) -> bool:
        """Event value once decided: segment unhit strictly before departure #budget."""
        if self.budget == 0:
            return True    # zeroth departure is time 0 by convention; H > 0 given the start is off the segment
        if self.hit_time is None:
            return len(self.departures) >= self.budget
        if len(self.departures) < self.budget:
            return False
        return self.hit_time > self.departures[self.budget - 1]

    def survived_at(self, budget: int) -> bool:
        """Nested-budget readout (requires the tracker ran with >= budget)."""
        if budget == 0:
            return True
        if len(self.departures) >= budget:
            d = self.departures[budget - 1]
            return self.hit_time is None or self.hit_time > d
        if self.hit_time is not None:
            return False
        raise ParameterError("tracker not advanced far enough for this budget")

    def observe(self, t0: int, sites: np.ndarray) -> None:
        if self.decided:
            return
        seg_hits = np.flatnonzero(self.segment.contains(sites))
        stop = int(seg_hits[0]) if seg_hits.size else sites.size
        if seg_hits.size:
            self.hit_time = t0 + stop
        dist = self.g.linf_distance(sites, self.center)
        inner_hits = np.flatnonzero(dist <= self.inner)
        outer_miss = np.flatnonzero(dist > self.outer)
        cursor = 0
        while len(self.departures) < self.budget:
            if self.seeking_return:
                k = np.searchsorted(inner_hits, cursor)
                if k == inner_hits.size or inner_hits[k] > stop:
                    break
                cursor = int(inner_hits[k]) + 1
                self.seeking_return = False
            else:
                k = np.searchsorted(outer_miss, cursor)
                if k == outer_miss.size or outer_miss[k] > stop:
                    break
                self.departures.append(t0 + int(outer_miss[k]))
                cursor = int(outer_miss[k]) + 1
                self.seeking_return = True


def _drive_trackers(g: TorusGeometry, cfg: WalkConfig,
                    trackers: Sequence[SurvivalTracker],
                    step_cap: int = 500_000_000) -> None:
    for t0, sites in iter_positions(g, cfg, unbounded=True, block_steps=256):
        for tracker in trackers:
            tracker.observe(t0, sites)
        if all(tr.decided for tr in trackers):
            return
        if t0 > step_cap:
            raise ResourceLimitError("survival run exceeded the step cap")


def exact_survival_probability(g: TorusGeometry, start: int, anchor: int,
                               seg_len: int, inner_radius: int, outer_radius: int,
                               budget: int, tol: float = 1e-10) -> float:
    """Absorbing-chain solve of P[start][segment unhit before departure #budget].

    States are (site, phase) with alternating seek-return / seek-departure
    phases; hitting the segment absorbs into failure, completing the last
    departure absorbs into success.  Exact up to the solver tolerance.
    """
    check_excursion_radii(g, inner_radius, outer_radius)
    if g.volume > 10_000:
        raise ResourceLimitError("exact survival solve is guarded to <= 10^4 sites")
    segment = segment_sites(g, anchor, 1, seg_len)
    if start in segment:
        raise ParameterError("start must lie off the segment")
    if budget == 0:
        return 1.0

    n = g.volume
    phases = 2 * budget
    seg_mask = segment.mask()
    dist = g.linf_distance(np.arange(n), anchor)
    in_inner = dist <= inner_radius
    out_outer = dist > outer_radius

    def state(site_arr, phase_arr):
        return site_arr * phases + phase_arr

    nbrs = g.neighbors_of(np.arange(n))   # (n, 2*dim)
    rows, cols, vals = [], [], []
    b = np.zeros(n * phases)
    p_step = 1.0 / (2 * g.dim)
    live = ~seg_mask
    live_sites = np.flatnonzero(live)
    for phase in range(phases):
        seeking_return = phase % 2 == 0
        for nb in range(2 * g.dim):
            dest = nbrs[live_sites, nb]
            ok = ~seg_mask[dest]
            src = live_sites[ok]
            dst = dest[ok]
            if seeking_return:
                new_phase = np.where(in_inner[dst], phase + 1, phase)
                rows.append(state(src, np.full(src.size, phase)))
                cols.append(state(dst, new_phase))
                vals.append(np.full(src.size, p_step))
            else:
                exits = out_outer[dst]
                if phase == phases - 1:
                    b_idx = state(src[exits], np.full(int(exits.sum()), phase))
                    np.add.at(b, b_idx, p_step)
                    keep = ~exits
                    rows.append(state(src[keep], np.full(int(keep.sum()), phase)))
                    cols.append(state(dst[keep], np.full(int(keep.sum()), phase)))
                    vals.append(np.full(int(keep.sum()), p_step))
                else:
                    new_phase = np.where(exits, phase + 1, phase)
                    rows.append(state(src, np.full(src.size, phase)))
                    cols.append(state(dst, new_phase))
                    vals.append(np.full(src.size, p_step))

    q = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * phases, n * phases))
    system = sparse.eye(n * phases, format="csr") - q
    h = _solve_columns(system, b, tol)
    init_phase = 1 if in_inner[start] else 0
    return float(h[state(np.int64(start), np.int64(init_phase))])


@dataclass(frozen=True)
class SurvivalReport:
    """Monte Carlo survival estimate plus the exact value when computable."""

    report: EstimateReport
    exact: float | None


def survival_probability(spec: ExperimentSpec, anchor: int, seg_len: int,
                         inner_radius: int, outer_radius: int, budget: int,
                         compute_exact: bool = True) -> SurvivalReport:
    """P[segment at `anchor` unhit before the budget-th departure], estimated
    over the spec's replicas from a fixed start (uniform starts are rejected:
    the event is defined relative to one origin)."""
    g = spec.geometry()
    if spec.start is None:
        raise ParameterError("survival estimation needs a fixed start site")
    segment = segment_sites(g, anchor, 1, seg_len)
    if spec.start in segment:
        raise ParameterError("start must lie off the segment")
    check_excursion_radii(g, inner_radius, outer_radius)
    if budget < 0:
        raise ParameterError("budget must be >= 0")

    started = time.monotonic()
    successes = 0
    for i in range(spec.replications):
        tracker = SurvivalTracker(g, anchor, seg_len, inner_radius, outer_radius, budget)
        if budget > 0:
            cfg = WalkConfig(seed=spec.replica_seed(i), horizon=0, start=spec.start)
            _drive_trackers(g, cfg, [tracker])
        successes += tracker.survived
    wall = time.monotonic() - started
    report = EstimateReport(
        event={"kind": "SURVIVAL", "anchor": anchor, "seg_len": seg_len,
               "inner_radius": inner_radius, "outer_radius": outer_radius,
               "budget": budget},
        spec=spec.to_dict(),
        successes=successes,
        trials=spec.replications,
        estimate=successes / spec.replications,
        ci_low=wilson_ci(successes, spec.replications)[0],
        ci_high=wilson_ci(successes, spec.replications)[1],
        replica_ranges=((0, spec.replications),),
        seeds_digest=_seeds_digest(spec, [(0, spec.replications)]),
        wall_seconds=wall,
    )
    exact = None
    if compute_exact and g.volume <= 10_000:
        exact = exact_survival_probability(g, spec.start, anchor, seg_len,
                                           inner_radius, outer_radius, budget)
    return SurvivalReport(report=report, exact=exact)


def survival_curve(spec: ExperimentSpec, anchor: int, seg_len: int,
                   inner_radius: int, outer_radius: int,
                   budgets: Sequence[int], compute_exact: bool = True,
                   ) -> dict[int, SurvivalReport]:
    """Survival estimates for several budgets sharing the same runs.

    Shared runs make the estimates exactly non-increasing in the budget
    (the events are nested path by path).
    """
    g = spec.geometry()
    if spec.start is None:
        raise ParameterError("survival estimation needs a fixed start site")
    budgets = sorted(set(int(b) for b in budgets))
    if budgets and budgets[0] < 0:
        raise ParameterError("budgets must be >= 0")
    top = budgets[-1] if budgets else 0
    successes = {b: 0 for b in budgets}
    started = time.monotonic()
    for i in range(spec.replications):
        tracker = SurvivalTracker(g, anchor, seg_len, inner_radius, outer_radius, top)
        if top > 0:
            cfg = WalkConfig(seed=spec.replica_seed(i), horizon=0, start=spec.start)
            _drive_trackers(g, cfg, [tracker])
        for b in budgets:
            successes[b] += tracker.survived_at(b)
    wall = time.monotonic() - started
    out: dict[int, SurvivalReport] = {}
    for b in budgets:
        exact = None
        if compute_exact and g.volume <= 10_000:
            exact = exact_survival_probability(g, spec.start, anchor, seg_len,
                                               inner_radius, outer_radius, b)
        lo, hi = wilson_ci(successes[b], spec.replications)
        out[b] = SurvivalReport(
            report=EstimateReport(
                event={"kind": "SURVIVAL", "anchor": anchor, "seg_len": seg_len,
                       "inner_radius": inner_radius, "outer_radius": outer_radius,
                       "budget": b},
                spec=spec.to_dict(),
                successes=successes[b],
                trials=spec.replications,
                estimate=successes[b] / spec.replications,
                ci_low=lo,
                ci_high=hi,
                replica_ranges=((0, spec.replications),),
                seeds_digest=_seeds_digest(spec, [(0, spec.replications)]),
                wall_seconds=wall,
            ),
            exact=exact,
        )
    return out


# ---------------------------------------------------------------------------
# Second-moment diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SecondMomentReport:
    """Sample moments of the survival count over a set of anchors."""

    anchors: tuple[int, ...]
    budget: int
    mean: float
    variance: float
    per_anchor_estimates: tuple[float, ...]
    variance_shape: float          # r^d N^nu + u N^(2 nu) L^d / r at the spec's parameters
    fitted_constant: float         # least-squares c with variance ~ c * shape; reported, never asserted
    indicators: np.ndarray         # (replications, anchors) survival indicators

    def linearity_gap(self) -> float:
        return abs(self.mean - sum(self.per_anchor_estimates))


def second_moment_report(spec: ExperimentSpec, anchors: Sequence[int], seg_len: int,
                         inner_radius: int, outer_radius: int) -> SecondMomentReport:
    """Simulate the survival count over all anchors at once and report moments.

    Every replica drives one streaming tracker per anchor (each step only
    advances trackers whose boxes see the current block).  The mean equals
    the sum of per-anchor estimates by construction; the variance is compared
    against the theoretical shape with a fitted constant, never asserted.
    """
    g = spec.geometry()
    if spec.start is None:
        raise ParameterError("second-moment estimation needs a fixed start site")
    anchors = tuple(int(a) for a in anchors)
    if not anchors:
        raise ParameterError("anchor set must be nonempty")
    budget = constants.excursion_budget(spec.steps_per_site, inner_radius, spec.dim,
                                        spec.budget_coeff)
    indicators = np.zeros((spec.replications, len(anchors)), dtype=bool)
    for i in range(spec.replications):
        trackers = [SurvivalTracker(g, a, seg_len, inner_radius, outer_radius, budget)
                    for a in anchors]
        if budget > 0:
            cfg = WalkConfig(seed=spec.replica_seed(i), horizon=0, start=spec.start)
            _drive_trackers(g, cfg, trackers)
        indicators[i] = [tr.survived for tr in trackers]

    counts = indicators.sum(axis=1).astype(float)
    mean = float(counts.mean())
    variance = float(counts.var(ddof=1)) if spec.replications > 1 else 0.0
    per_anchor = tuple(float(x) for x in indicators.mean(axis=0))
    shape = (outer_radius**spec.dim * spec.side**spec.count_exp
             + spec.steps_per_site * spec.side**(2 * spec.count_exp)
             * inner_radius**spec.dim / outer_radius)
    fitted = variance / shape if shape > 0 else 0.0
    return SecondMomentReport(
        anchors=anchors,
        budget=budget,
        mean=mean,
        variance=variance,
        per_anchor_estimates=per_anchor,
        variance_shape=float(shape),
        fitted_constant=float(fitted),
        indicators=indicators,
    )
