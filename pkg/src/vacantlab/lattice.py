"""Torus geometry: site indexing, neighbors, segments, balls, boundaries.

Sites of the d-dimensional torus of side N are numbered 0 .. N**d - 1 with
axis 1 varying fastest: ``index = sum_i coord[i] * N**i``.  The indexing is
fixed so that serialized site orders are identical across platforms.

Site sets carry two interchangeable representations: a sorted index list
(cheap for small working sets such as boundaries and segments) and a packed
bitmap with one bit per site (cheap for whole-torus analytics).  Whichever
representation a constructor receives is kept; the other is materialized
lazily and cached.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ParameterError

# Hard cap on the number of addressable sites: packed bitmaps, visit maps
# and distance sweeps all index with int64 but allocate O(volume) memory.
MAX_VOLUME = 2**40


@dataclass(frozen=True)
class TorusGeometry:
    """The lattice (Z/NZ)^d with wraparound adjacency."""

    dim: int
    side: int

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ConfigurationError("dim must be >= 1")
        if self.side < 3:
            raise ConfigurationError(
                "side must be >= 3 so every site has 2*dim distinct neighbors")
        if self.side**self.dim > MAX_VOLUME:
            raise ConfigurationError(
                f"volume {self.side}**{self.dim} exceeds the addressable limit {MAX_VOLUME}")

    @property
    def volume(self) -> int:
        return self.side**self.dim

    @cached_property
    def strides(self) -> np.ndarray:
        return self.side ** np.arange(self.dim, dtype=np.int64)

    # -- site codec --------------------------------------------------------

    def encode(self, coords) -> np.ndarray | np.int64:
        """Coordinate tuples (.., d) in [0, side)^d to site indices."""
        c = np.asarray(coords, dtype=np.int64)
        scalar = c.ndim == 1
        idx = (np.atleast_2d(c) % self.side) @ self.strides
        return idx[0] if scalar else idx

    def decode(self, sites) -> np.ndarray:
        """Site indices to coordinate rows (.., d)."""
        s = np.asarray(sites, dtype=np.int64)
        return (s[..., None] // self.strides) % self.side

    def contains_index(self, sites) -> np.ndarray:
        s = np.asarray(sites)
        return (s >= 0) & (s < self.volume)

    # -- adjacency ---------------------------------------------------------

    def neighbors(self, site: int) -> np.ndarray:
        """The 2*dim neighbors of one site, ordered (-e1, +e1, -e2, +e2, ...)."""
        return self.neighbors_of(np.asarray([site], dtype=np.int64))[0]

    def neighbors_of(self, sites: np.ndarray) -> np.ndarray:
        """Vectorized neighbors, shape (len(sites), 2*dim), same axis order."""
        s = np.asarray(sites, dtype=np.int64)
        if s.size and (s.min() < 0 or s.max() >= self.volume):
            raise ParameterError("site index out of range")
        coords = self.decode(s)
        out = np.empty((s.shape[0], 2 * self.dim), dtype=np.int64)
        n = self.side
        for axis in range(self.dim):
            stride = int(self.strides[axis])
            c = coords[:, axis]
            out[:, 2 * axis] = np.where(c > 0, s - stride, s + (n - 1) * stride)
            out[:, 2 * axis + 1] = np.where(c < n - 1, s + stride, s - (n - 1) * stride)
        return out

    # -- metric ------------------------------------------------------------

    def axis_distance(self, a, b) -> np.ndarray:
        """Per-coordinate wrapped distance min(|a-b|, side-|a-b|)."""
        diff = np.abs(np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64))
        return np.minimum(diff, self.side - diff)

    def linf_distance(self, sites, center: int) -> np.ndarray:
        """Torus l-infinity distance from each site index to one center site."""
        sc = self.decode(np.asarray(sites, dtype=np.int64))
        cc = self.decode(np.int64(center))
        return self.axis_distance(sc, cc).max(axis=-1)


class SiteSet:
    """A set of sites of one geometry (sorted index list and/or packed bitmap)."""

    __slots__ = ("geometry", "_indices", "_packed")

    def __init__(self, geometry: TorusGeometry, *, indices=None, packed=None):
        if indices is None and packed is None:
            raise ParameterError("SiteSet needs indices or a packed bitmap")
        self.geometry = geometry
        self._indices = indices
        self._packed = packed

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_indices(cls, geometry: TorusGeometry, sites: Iterable[int]) -> "SiteSet":
        idx = np.unique(np.asarray(list(sites) if not isinstance(sites, np.ndarray) else sites,
                                   dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= geometry.volume):
            raise ParameterError("site index out of range")
        return cls(geometry, indices=idx)

    @classmethod
    def from_coords(cls, geometry: TorusGeometry, coords: Sequence) -> "SiteSet":
        return cls.from_indices(geometry, geometry.encode(np.atleast_2d(np.asarray(coords))))

    @classmethod
    def from_mask(cls, geometry: TorusGeometry, mask: np.ndarray) -> "SiteSet":
        m = np.asarray(mask, dtype=bool).reshape(-1)
        if m.size != geometry.volume:
            raise ParameterError("mask length must equal the torus volume")
        return cls(geometry, packed=np.packbits(m, bitorder="little"))

    @classmethod
    def empty(cls, geometry: TorusGeometry) -> "SiteSet":
        return cls.from_indices(geometry, np.empty(0, dtype=np.int64))

    @classmethod
    def full(cls, geometry: TorusGeometry) -> "SiteSet":
        return cls.from_mask(geometry, np.ones(geometry.volume, dtype=bool))

    # -- representations ---------------------------------------------------

    def indices(self) -> np.ndarray:
        if self._indices is None:
            self._indices = np.flatnonzero(self.mask()).astype(np.int64)
        return self._indices

    def mask(self) -> np.ndarray:
        if self._packed is not None:
            return np.unpackbits(self._packed, count=self.geometry.volume,
                                 bitorder="little").view(bool)
        m = np.zeros(self.geometry.volume, dtype=bool)
        m[self._indices] = True
        return m

    def packed(self) -> np.ndarray:
        if self._packed is None:
            self._packed = np.packbits(self.mask(), bitorder="little")
        return self._packed

    # -- queries -----------------------------------------------------------

    def __len__(self) -> int:
        if self._indices is not None:
            return int(self._indices.size)
        return int(np.bitwise_count(self._packed).sum())

    def __bool__(self) -> bool:
        return len(self) > 0

    def contains(self, sites) -> np.ndarray:
        """Vectorized membership for an array of site indices."""
        s = np.asarray(sites, dtype=np.int64)
        if self._packed is not None:
            return (self._packed[s >> 3] >> (s & 7).astype(np.uint8)) & 1 == 1
        if self._indices.size == 0:
            return np.zeros(s.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(self._indices, s), self._indices.size - 1)
        return self._indices[pos] == s

    def __contains__(self, site: int) -> bool:
        return bool(self.contains(np.asarray([site]))[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, SiteSet):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.indices(),
                                                                  other.indices())

    def __hash__(self):
        return hash((self.geometry, self.indices().tobytes()))

    def __repr__(self) -> str:
        return f"SiteSet(dim={self.geometry.dim}, side={self.geometry.side}, size={len(self)})"

    # -- algebra -----------------------------------------------------------

    def _check_same(self, other: "SiteSet") -> None:
        if self.geometry != other.geometry:
            raise ParameterError("site sets live on different geometries")

    def union(self, other: "SiteSet") -> "SiteSet":
        self._check_same(other)
        return SiteSet(self.geometry, packed=self.packed() | other.packed())

    def intersection(self, other: "SiteSet") -> "SiteSet":
        self._check_same(other)
        return SiteSet(self.geometry, packed=self.packed() & other.packed())

    def difference(self, other: "SiteSet") -> "SiteSet":
        self._check_same(other)
        return SiteSet(self.geometry, packed=self.packed() & ~other.packed())

    def issubset(self, other: "SiteSet") -> bool:
        self._check_same(other)
        return not np.any(self.packed() & ~other.packed())


# ---------------------------------------------------------------------------
# Geometric constructions
# ---------------------------------------------------------------------------

def segment_sites(g: TorusGeometry, anchor: int, axis: int, length: int) -> SiteSet:
    """Sites {anchor + k*e_axis mod N : k = 0..length}; axis is 1-based.

    Wraparound collapses duplicates, so the cardinality is min(length+1, side).
    """
    if not 1 <= axis <= g.dim:
        raise ParameterError(f"axis must be in 1..{g.dim}")
    if length < 0:
        raise ParameterError("length must be >= 0")
    coords = np.repeat(g.decode(np.int64(anchor))[None, :], min(length + 1, g.side), axis=0)
    coords[:, axis - 1] += np.arange(coords.shape[0])
    return SiteSet.from_indices(g, g.encode(coords))


def boundary(g: TorusGeometry, sites: SiteSet) -> SiteSet:
    """Outer boundary: sites not in the set with at least one neighbor in it."""
    idx = sites.indices()
    if idx.size == 0:
        return SiteSet.empty(g)
    candidates = np.unique(g.neighbors_of(idx).ravel())
    return SiteSet.from_indices(g, candidates[~sites.contains(candidates)])


def linf_ball(g: TorusGeometry, center: int, radius: int) -> SiteSet:
    """Closed l-infinity ball; the whole torus once 2*radius+1 >= side."""
    if radius < 0:
        raise ParameterError("radius must be >= 0")
    if 2 * radius + 1 >= g.side:
        return SiteSet.full(g)
    cc = g.decode(np.int64(center))
    offsets = np.arange(-radius, radius + 1)
    axes = np.meshgrid(*[offsets] * g.dim, indexing="ij")
    coords = np.stack([a.ravel() for a in axes], axis=1) + cc
    return SiteSet.from_indices(g, g.encode(coords))


def set_distance(g: TorusGeometry, a: SiteSet, b: SiteSet) -> int:
    """min over pairs of the torus l-infinity distance; error on empty operands."""
    ia, ib = a.indices(), b.indices()
    if ia.size == 0 or ib.size == 0:
        raise ParameterError("undefined distance: empty operand")
    ca, cb = g.decode(ia), g.decode(ib)
    best = g.side
    # chunk the pairwise table to keep memory bounded on large sets
    chunk = max(1, int(2e7) // max(ib.size, 1))
    for lo in range(0, ia.size, chunk):
        d = g.axis_distance(ca[lo:lo + chunk, None, :], cb[None, :, :]).max(axis=-1)
        best = min(best, int(d.min()))
        if best == 0:
            return 0
    return best


def linf_distance_transform(g: TorusGeometry, source_mask: np.ndarray) -> np.ndarray:
    """Exact torus l-infinity distance from every site to a source set.

    Separable sweep: one relaxation pass per axis computes
    ``D_j[x] = min_k max(D_{j-1}[x + k e_j], dist(k))`` which is exact for the
    chessboard metric.  Unreachable sites (empty sources) come back as side.
    """
    shape = (g.side,) * g.dim
    big = np.int64(g.side)
    dist = np.where(np.asarray(source_mask, dtype=bool).reshape(shape), np.int64(0), big)
    if not dist.size or dist.min() == big:
        return np.full(g.volume, big, dtype=np.int64)
    # grid axis for lattice axis j+1 is dim-1-j because axis 1 varies fastest
    for axis in range(g.dim):
        grid_axis = g.dim - 1 - axis
        prev = dist
        dist = np.full_like(prev, big)
        for k in range(g.side):
            shifted = np.roll(prev, -k, axis=grid_axis)
            np.minimum(dist, np.maximum(shifted, min(k, g.side - k)), out=dist)
    return dist.reshape(-1)
