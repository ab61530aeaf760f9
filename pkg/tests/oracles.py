"""Independent brute-force oracles used by the test suite.

Everything here is written for clarity over speed (plain Python loops,
breadth-first search) and deliberately shares no code with the package
implementations it checks.
"""

from __future__ import annotations

from collections import deque

import numpy as np


def coord_of(site: int, dim: int, side: int) -> tuple[int, ...]:
    out = []
    for _ in range(dim):
        out.append(site % side)
        site //= side
    return tuple(out)


def site_of(coords, dim: int, side: int) -> int:
    s = 0
    for axis in range(dim - 1, -1, -1):
        s = s * side + (coords[axis] % side)
    return s


def neighbors_bf(site: int, dim: int, side: int) -> list[int]:
    c = list(coord_of(site, dim, side))
    out = []
    for axis in range(dim):
        for delta in (-1, +1):
            cc = list(c)
            cc[axis] = (cc[axis] + delta) % side
            out.append(site_of(cc, dim, side))
    return out


def wrapped_axis_dist(a: int, b: int, side: int) -> int:
    d = abs(a - b)
    return min(d, side - d)


def linf_dist_bf(x: int, y: int, dim: int, side: int) -> int:
    cx, cy = coord_of(x, dim, side), coord_of(y, dim, side)
    return max(wrapped_axis_dist(a, b, side) for a, b in zip(cx, cy))


def boundary_bf(members: set[int], dim: int, side: int) -> set[int]:
    """Scan every site of the torus for the outer-boundary condition."""
    out = set()
    for site in range(side**dim):
        if site in members:
            continue
        if any(n in members for n in neighbors_bf(site, dim, side)):
            out.add(site)
    return out


def flood_fill_components(vacant: np.ndarray, dim: int, side: int) -> list[set[int]]:
    """BFS labeling of the vacant sites into connected components."""
    vacant = np.asarray(vacant, dtype=bool)
    seen = np.zeros_like(vacant)
    comps = []
    for start in range(vacant.size):
        if not vacant[start] or seen[start]:
            continue
        comp = set()
        queue = deque([start])
        seen[start] = True
        while queue:
            s = queue.popleft()
            comp.add(s)
            for n in neighbors_bf(s, dim, side):
                if vacant[n] and not seen[n]:
                    seen[n] = True
                    queue.append(n)
        comps.append(comp)
    return comps


def segment_sites_bf(anchor: int, axis: int, length: int, dim: int, side: int) -> set[int]:
    c = coord_of(anchor, dim, side)
    out = set()
    for k in range(length + 1):
        cc = list(c)
        cc[axis - 1] += k
        out.add(site_of(cc, dim, side))
    return out


def ubiquity_bf(vacant: np.ndarray, seg_len: int, reach_exp: float, dim: int, side: int) -> bool:
    """Triple loop over (site, axis, offset): a vacant segment of seg_len must
    start within distance < side**reach_exp along every axis from every site."""
    import math

    reach = math.ceil(side**reach_exp)
    reach = min(reach, side)
    for site in range(side**dim):
        for axis in range(1, dim + 1):
            found = False
            for m in range(reach):
                c = list(coord_of(site, dim, side))
                c[axis - 1] += m
                start = site_of(c, dim, side)
                seg = segment_sites_bf(start, axis, seg_len, dim, side)
                if all(vacant[s] for s in seg):
                    found = True
                    break
            if not found:
                return False
    return True


def surround_anchors_bf(segment_vacant: np.ndarray, window_visited: np.ndarray,
                        seg_len: int, dim: int, side: int) -> set[int]:
    """All anchors whose e1-segment is fully 'vacant' under one mask while its
    entire boundary is covered by another mask (brute scan over all anchors)."""
    out = set()
    for anchor in range(side**dim):
        seg = segment_sites_bf(anchor, 1, seg_len, dim, side)
        if not all(segment_vacant[s] for s in seg):
            continue
        bdry = boundary_bf(seg, dim, side)
        if all(window_visited[b] for b in bdry):
            out.add(anchor)
    return out


def _step_batch(coords: np.ndarray, side: int, rng) -> None:
    """Advance every walk in the batch by one uniform unit step (in place)."""
    n, dim = coords.shape
    dirs = rng.integers(0, 2 * dim, size=n)
    axis = dirs >> 1
    sign = 2 * (dirs & 1) - 1
    rows = np.arange(n)
    coords[rows, axis] = (coords[rows, axis] + sign) % side


def mc_exit_times(dim: int, side: int, domain_mask, start: int, n_walks: int,
                  rng, cap: int = 1_000_000) -> np.ndarray:
    """Exit times of independent torus walks from a domain (batch sampler)."""
    domain_mask = np.asarray(domain_mask, dtype=bool)
    strides = side ** np.arange(dim)
    coords = np.tile(np.array(coord_of(start, dim, side)), (n_walks, 1))
    ids = np.arange(n_walks)
    times = np.full(n_walks, -1, dtype=np.int64)
    for t in range(cap + 1):
        out = ~domain_mask[coords @ strides]
        if out.any():
            times[ids[out]] = t
            coords = coords[~out]
            ids = ids[~out]
            if ids.size == 0:
                return times
        _step_batch(coords, side, rng)
    raise AssertionError("exit-time sampler hit its cap")


def mc_hit_before_exit(dim: int, side: int, target_mask, domain_mask, start: int,
                       n_walks: int, rng, cap: int = 1_000_000) -> float:
    """Fraction of walks entering the target before first leaving the domain."""
    target_mask = np.asarray(target_mask, dtype=bool)
    domain_mask = np.asarray(domain_mask, dtype=bool)
    strides = side ** np.arange(dim)
    coords = np.tile(np.array(coord_of(start, dim, side)), (n_walks, 1))
    hits = 0
    decided = 0
    for _ in range(cap + 1):
        sites = coords @ strides
        hit = target_mask[sites]
        done = hit | ~domain_mask[sites]
        hits += int(hit.sum())
        decided += int(done.sum())
        coords = coords[~done]
        if coords.shape[0] == 0:
            return hits / n_walks
        _step_batch(coords, side, rng)
    raise AssertionError(f"hitting sampler undecided after cap ({decided}/{n_walks})")


def return_prob_within_bf(dim: int, cap: int) -> float:
    """Exact P[simple walk on Z^dim first returns to 0 within cap steps],
    by evolving the position distribution of never-returned walks."""
    origin = tuple([0] * dim)
    probs = {origin: 1.0}
    returned = 0.0
    for _ in range(cap):
        nxt: dict[tuple, float] = {}
        for pos, p in probs.items():
            share = p / (2 * dim)
            for axis in range(dim):
                for delta in (-1, 1):
                    q = list(pos)
                    q[axis] += delta
                    key = tuple(q)
                    nxt[key] = nxt.get(key, 0.0) + share
        returned += nxt.pop(origin, 0.0)
        probs = nxt
    return returned


def survival_decision_bf(dim: int, side: int, traj, anchor: int, seg_len: int,
                         inner_radius: int, outer_radius: int, budget: int):
    """Decide {segment unhit before departure #budget} from an explicit
    trajectory with a step-by-step state machine; None when undecided."""
    if budget == 0:
        return True
    seg = segment_sites_bf(anchor, 1, seg_len, dim, side)
    seeking_return = True
    departures = 0
    for site in traj:
        if site in seg:
            return False
        dist = linf_dist_bf(int(site), anchor, dim, side)
        if seeking_return:
            if dist <= inner_radius:
                seeking_return = False
        elif dist > outer_radius:
            departures += 1
            if departures == budget:
                return True
            seeking_return = True
    return None


def wilson_interval_bf(successes: int, trials: int, z: float = 1.959963984540054):
    """Textbook Wilson score interval, written independently."""
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * ((p * (1 - p) / trials + z * z / (4 * trials * trials)) ** 0.5)
    return center - half, center + half
