"""Seeded simple-random-walk engine with streaming visit recording.

The trajectory of a walk is a pure function of (geometry, seed, start,
horizon): directions come from a Philox generator keyed by the seed (see
:mod:`vacantlab.rng`), drawn as unbiased bounded integers in [0, 2*dim)
where value 2*i selects -e_{i+1} and 2*i+1 selects +e_{i+1}.  A uniform
start consumes exactly one draw before the direction stream, so trajectories
with the same seed agree step for step regardless of horizon.

Full trajectories are never stored: per-site first/last visit times answer
every range query of the form "visited within [0,t]" or "visited within
[s, final]", and streaming probes observe (time, site) blocks in order for
anything window-shaped.  The reserved timestamp NEVER (2**63-1) marks
unvisited sites, in memory and in the binary dump format alike.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, Protocol, Sequence

import numpy as np

from .errors import ParameterError, ResourceLimitError
from .lattice import SiteSet, TorusGeometry
from .rng import make_generator

NEVER = np.int64(np.iinfo(np.int64).max)

# Direction draws happen in fixed-size blocks; the block length is part of
# the trajectory definition only in that probes see at most this many steps
# per callback.  The random stream itself is consumption-order identical for
# any blocking.
BLOCK_STEPS = 32768

_DUMP_MAGIC = b"VREC"
_DUMP_VERSION = 1
_DUMP_HEADER = struct.Struct("<4sIIQQQ")


@dataclass(frozen=True)
class WalkConfig:
    """One walk: seed, start site (None = uniform start), step count."""

    seed: int
    horizon: int
    start: int | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must fit in 64 bits")
        if self.horizon < 0:
            raise ParameterError("horizon must be >= 0")
        if self.start is not None and self.start < 0:
            raise ParameterError("start site must be >= 0 or None for uniform")


class Probe(Protocol):
    """Streaming observer: called once per block with times t0, t0+1, ..."""

    def observe(self, t0: int, sites: np.ndarray) -> None: ...


@dataclass(frozen=True)
class VisitRecord:
    """Per-site first/last visit timestamps of one completed walk."""

    geometry: TorusGeometry
    seed: int
    first_visit: np.ndarray
    last_visit: np.ndarray
    final_time: int
    start_site: int
    end_site: int

    def visited_by(self, t: int) -> np.ndarray:
        """Boolean mask of sites visited within [0, t]."""
        return self.first_visit <= t

    def visited_since(self, s: int) -> np.ndarray:
        """Boolean mask of sites visited within [s, final_time]."""
        return (self.last_visit >= s) & (self.last_visit != NEVER)

    # -- binary dump -------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = _DUMP_HEADER.pack(_DUMP_MAGIC, _DUMP_VERSION, self.geometry.dim,
                                   self.geometry.side, self.seed, self.final_time)
        return header + self.first_visit.astype("<i8").tobytes() \
                      + self.last_visit.astype("<i8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "VisitRecord":
        magic, version, dim, side, seed, horizon = _DUMP_HEADER.unpack_from(blob, 0)
        if magic != _DUMP_MAGIC:
            raise ParameterError("not a visit-record dump (bad magic)")
        if version != _DUMP_VERSION:
            raise ParameterError(f"unsupported dump version {version}")
        g = TorusGeometry(dim, side)
        body = np.frombuffer(blob, dtype="<i8", offset=_DUMP_HEADER.size)
        if body.size != 2 * g.volume:
            raise ParameterError("dump body length does not match the geometry")
        first = body[: g.volume].astype(np.int64)
        last = body[g.volume:].astype(np.int64)
        start = int(np.flatnonzero(first == 0)[0])
        end = int(np.flatnonzero(last == horizon)[0])
        return cls(g, seed, first, last, int(horizon), start, end)


def iter_positions(g: TorusGeometry, cfg: WalkConfig, unbounded: bool = False,
                   block_steps: int = BLOCK_STEPS) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (t0, sites) blocks of the trajectory, starting with time 0.

    With ``unbounded=True`` the stream ignores cfg.horizon and runs until the
    caller stops consuming.  The trajectory is a prefix-stable function of
    the seed alone: block size only shapes the callback granularity.  Small
    ``block_steps`` (it doubles per block up to BLOCK_STEPS) suits callers
    that usually stop within a few hundred steps.
    """
    gen = make_generator(cfg.seed)
    if cfg.start is None:
        start = int(gen.integers(0, g.volume))
    else:
        if cfg.start >= g.volume:
            raise ParameterError("start site out of range")
        start = cfg.start
    limit = None if unbounded else cfg.horizon

    coords = g.decode(np.int64(start)).astype(np.int64)
    yield 0, np.asarray([start], dtype=np.int64)

    done = 0
    dim = g.dim
    strides = g.strides
    block = max(1, block_steps)
    while limit is None or done < limit:
        n = block if limit is None else min(block, limit - done)
        block = min(2 * block, BLOCK_STEPS)
        dirs = gen.integers(0, 2 * dim, size=n, dtype=np.uint64)
        axis = (dirs >> np.uint64(1)).astype(np.int64)
        sign = (2 * (dirs & np.uint64(1)).astype(np.int64) - 1)
        deltas = np.zeros((n, dim), dtype=np.int64)
        deltas[np.arange(n), axis] = sign
        walked = (coords + np.cumsum(deltas, axis=0)) % g.side
        sites = walked @ strides
        yield done + 1, sites
        coords = walked[-1]
        done += n


def simulate(g: TorusGeometry, cfg: WalkConfig,
             probes: Iterable[Probe] = ()) -> VisitRecord:
    """Run the walk for exactly cfg.horizon steps, recording visit times.

    Probes receive every (time, site) pair in order, blockwise.  Raises
    ResourceLimitError when the two per-site timestamp maps cannot be
    allocated.
    """
    try:
        first = np.full(g.volume, NEVER, dtype=np.int64)
        last = np.full(g.volume, -1, dtype=np.int64)
    except MemoryError as exc:
        raise ResourceLimitError(
            f"cannot allocate visit maps for {g.volume} sites") from exc

    probes = tuple(probes)
    start_site = end_site = -1
    for t0, sites in iter_positions(g, cfg):
        times = np.arange(t0, t0 + sites.size, dtype=np.int64)
        np.minimum.at(first, sites, times)
        np.maximum.at(last, sites, times)
        for probe in probes:
            probe.observe(t0, sites)
        if t0 == 0:
            start_site = int(sites[0])
        end_site = int(sites[-1])
    last[last < 0] = NEVER
    return VisitRecord(g, cfg.seed, first, last, cfg.horizon, start_site, end_site)


def first_time(g: TorusGeometry, cfg: WalkConfig, sites: SiteSet,
               mode: str = "enter") -> int:
    """Entrance time H(A) (mode 'enter') or exit time T(A) (mode 'exit').

    Returns the first t >= 0 with X_t in A (resp. not in A), or NEVER when
    the horizon elapses first.
    """
    if mode not in ("enter", "exit"):
        raise ParameterError("mode must be 'enter' or 'exit'")
    for t0, block in iter_positions(g, cfg):
        member = sites.contains(block)
        hits = member if mode == "enter" else ~member
        if hits.any():
            return t0 + int(np.argmax(hits))
    return int(NEVER)


@dataclass(frozen=True)
class ExcursionSchedule:
    """Alternating return/departure times for nested boxes around one center."""

    center: int
    inner_radius: int
    outer_radius: int
    returns: np.ndarray      # times the walk (re-)enters B(center, inner_radius)
    departures: np.ndarray   # times it next leaves B(center, outer_radius)
    truncated: bool          # horizon ended while a pair was still open

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.returns.tolist(), self.departures.tolist()))


def check_excursion_radii(g: TorusGeometry, inner_radius: int, outer_radius: int) -> None:
    if not 1 <= inner_radius < outer_radius:
        raise ParameterError("need 1 <= inner_radius < outer_radius")
    if 2 * outer_radius + 1 >= g.side:
        raise ParameterError(
            "outer box would wrap onto itself: need 2*outer_radius + 1 < side")


def _excursion_pairs(g: TorusGeometry, blocks: Iterator[tuple[int, np.ndarray]],
                     center: int, inner_radius: int, outer_radius: int,
                     max_pairs: int) -> tuple[list[int], list[int]]:
    returns: list[int] = []
    departures: list[int] = []
    seeking_return = True
    for t0, sites in blocks:
        dist = g.linf_distance(sites, center)
        inner_hits = np.flatnonzero(dist <= inner_radius)
        outer_miss = np.flatnonzero(dist > outer_radius)
        cursor = 0
        while True:
            if seeking_return:
                k = np.searchsorted(inner_hits, cursor)
                if k == inner_hits.size:
                    break
                returns.append(t0 + int(inner_hits[k]))
                cursor = int(inner_hits[k]) + 1
                seeking_return = False
            else:
                k = np.searchsorted(outer_miss, cursor)
                if k == outer_miss.size:
                    break
                departures.append(t0 + int(outer_miss[k]))
                cursor = int(outer_miss[k]) + 1
                seeking_return = True
                if len(departures) == max_pairs:
                    return returns, departures
    return returns, departures


def excursion_schedule(g: TorusGeometry, cfg: WalkConfig, center: int,
                       inner_radius: int, outer_radius: int,
                       max_pairs: int) -> ExcursionSchedule:
    """Up to max_pairs (return, departure) pairs of the walk around `center`.

    A return is the first entry into the inner box after the previous
    departure; a departure is the first exit from the outer box after the
    matching return.  Times interleave strictly: R1 < D1 < R2 < D2 < ...
    """
    check_excursion_radii(g, inner_radius, outer_radius)
    if max_pairs < 1:
        raise ParameterError("max_pairs must be >= 1")
    returns, departures = _excursion_pairs(
        g, iter_positions(g, cfg), center, inner_radius, outer_radius, max_pairs)
    truncated = len(departures) < max_pairs
    return ExcursionSchedule(
        center=center,
        inner_radius=inner_radius,
        outer_radius=outer_radius,
        returns=np.asarray(returns, dtype=np.int64),
        departures=np.asarray(departures, dtype=np.int64),
        truncated=truncated,
    )


def excursion_schedule_from_path(g: TorusGeometry, path: Sequence[int], center: int,
                                 inner_radius: int, outer_radius: int,
                                 max_pairs: int) -> ExcursionSchedule:
    """Same state machine over an explicit position sequence (scripted walks)."""
    check_excursion_radii(g, inner_radius, outer_radius)
    sites = np.asarray(path, dtype=np.int64)
    returns, departures = _excursion_pairs(
        g, iter([(0, sites)]), center, inner_radius, outer_radius, max_pairs)
    return ExcursionSchedule(center, inner_radius, outer_radius,
                             np.asarray(returns, dtype=np.int64),
                             np.asarray(departures, dtype=np.int64),
                             truncated=len(departures) < max_pairs)


def sample_step(gen: np.random.Generator, g: TorusGeometry, site: int) -> int:
    """One unbiased walk step: each of the 2*dim neighbors with chance 1/(2*dim).

    The direction index is drawn with numpy's bounded-integer sampler (Lemire
    rejection, no modulo bias) and selects the neighbor in the documented
    (-e1, +e1, -e2, ...) order, exactly as the blockwise engine does.
    """
    direction = int(gen.integers(0, 2 * g.dim, dtype=np.uint64))
    return int(g.neighbors_of(np.asarray([site], dtype=np.int64))[0, direction])


def record_from_path(g: TorusGeometry, path: Sequence[int],
                     probes: Iterable[Probe] = ()) -> VisitRecord:
    """Build a VisitRecord from an explicit position sequence.

    Positions are taken as given (no adjacency check); useful for scripted
    walks in tests and diagnostics.  The record's seed is reported as 0.
    """
    sites = np.asarray(path, dtype=np.int64)
    if sites.size == 0:
        raise ParameterError("path must contain at least the start position")
    if sites.min() < 0 or sites.max() >= g.volume:
        raise ParameterError("path position out of range")
    first = np.full(g.volume, NEVER, dtype=np.int64)
    last = np.full(g.volume, -1, dtype=np.int64)
    times = np.arange(sites.size, dtype=np.int64)
    np.minimum.at(first, sites, times)
    np.maximum.at(last, sites, times)
    last[last < 0] = NEVER
    for probe in probes:
        probe.observe(0, sites)
    return VisitRecord(g, 0, first, last, int(sites.size - 1),
                       int(sites[0]), int(sites[-1]))


class WindowVisitProbe:
    """Streaming bitmap of the sites visited within one closed time window."""

    def __init__(self, g: TorusGeometry, start: int, end: int):
        if start < 0 or end < start:
            raise ParameterError("need 0 <= start <= end")
        self.start = start
        self.end = end
        self.visited = np.zeros(g.volume, dtype=bool)

    def observe(self, t0: int, sites: np.ndarray) -> None:
        hi = t0 + sites.size - 1
        if hi < self.start or t0 > self.end:
            return
        lo = max(self.start - t0, 0)
        hi = min(self.end - t0, sites.size - 1)
        self.visited[sites[lo:hi + 1]] = True


class MultiWindowProbe:
    """Visited bitmaps for several disjoint closed windows at once."""

    def __init__(self, g: TorusGeometry, windows: list[tuple[int, int]]):
        self.windows = [WindowVisitProbe(g, s, e) for s, e in windows]

    def observe(self, t0: int, sites: np.ndarray) -> None:
        for w in self.windows:
            w.observe(t0, sites)

    def visited(self, i: int) -> np.ndarray:
        return self.windows[i].visited
