"""Exact discrete potential theory on small domains.

Green function of the walk killed on exiting a domain, exact hitting
probabilities, expected exit times, and the two-sided hitting-probability
sandwich.  Everything is a deterministic sparse linear solve with an
explicit residual check; these are the desk-scale oracles the Monte Carlo
side is validated against.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import ParameterError, ResourceLimitError, SolverError
from .lattice import SiteSet, TorusGeometry

MAX_UNKNOWNS = 100_000       # solve-size guard
MAX_DENSE_DOMAIN = 3_000     # full |B| x |B| Green matrices beyond this are refused
DEFAULT_TOL = 1e-10


def _restricted_kernel(g: TorusGeometry, domain: np.ndarray, member: SiteSet) -> sparse.csr_matrix:
    """Substochastic step kernel on `domain`: transitions leaving it are killed."""
    nbrs = g.neighbors_of(domain)
    inside = member.contains(nbrs)
    rows = np.repeat(np.arange(domain.size), 2 * g.dim)[inside.ravel()]
    cols = np.searchsorted(domain, nbrs[inside])
    data = np.full(rows.size, 1.0 / (2 * g.dim))
    return sparse.csr_matrix((data, (rows, cols)), shape=(domain.size, domain.size))


def _solve_columns(system: sparse.csr_matrix, rhs: np.ndarray, tol: float) -> np.ndarray:
    """Solve system @ X = rhs with a residual guarantee (one refinement pass)."""
    lu = splu(system.tocsc())
    x = lu.solve(rhs)
    residual = system @ x - rhs
    if np.abs(residual).max() > tol:
        x = x - lu.solve(residual)
        residual = system @ x - rhs
        if np.abs(residual).max() > tol:
            raise SolverError(
                f"residual {np.abs(residual).max():.3e} above tolerance {tol:.3e}")
    return x


def _check_domain(g: TorusGeometry, domain: SiteSet) -> np.ndarray:
    idx = domain.indices()
    if idx.size == 0:
        raise ParameterError("domain must be nonempty")
    if idx.size == g.volume:
        raise ParameterError("walk is not killed: domain equals the whole torus")
    if idx.size > MAX_UNKNOWNS:
        raise ResourceLimitError(
            f"domain has {idx.size} sites; the solver guard is {MAX_UNKNOWNS}")
    return idx


@dataclass(frozen=True)
class KilledGreen:
    """Dense killed-walk Green matrix g(x, y) over one domain.

    values[i, j] is the expected number of visits to domain[j] before the
    walk started at domain[i] exits the domain.
    """

    geometry: TorusGeometry
    domain: np.ndarray          # sorted site indices
    values: np.ndarray          # (|B|, |B|)
    tol: float

    def local(self, site: int) -> int:
        i = int(np.searchsorted(self.domain, site))
        if i >= self.domain.size or self.domain[i] != site:
            raise ParameterError(f"site {site} is not in the domain")
        return i

    def value(self, x: int, y: int) -> float:
        return float(self.values[self.local(x), self.local(y)])

    def row_sum(self, x: int) -> float:
        return float(self.values[self.local(x)].sum())


def green_killed(g: TorusGeometry, domain: SiteSet, tol: float = DEFAULT_TOL) -> KilledGreen:
    """Full Green matrix of the walk killed when exiting `domain`.

    Solves (I - Q) G = I column by column, Q the domain-restricted step
    kernel; the max-norm residual is verified against `tol`.
    """
    idx = _check_domain(g, domain)
    if idx.size > MAX_DENSE_DOMAIN:
        raise ResourceLimitError(
            f"full Green matrix over {idx.size} sites exceeds the dense guard "
            f"{MAX_DENSE_DOMAIN}; use green_columns for selected targets")
    kernel = _restricted_kernel(g, idx, domain)
    system = sparse.eye(idx.size, format="csr") - kernel
    values = _solve_columns(system, np.eye(idx.size), tol)
    return KilledGreen(g, idx, values, tol)


def green_columns(g: TorusGeometry, domain: SiteSet, targets: np.ndarray,
                  tol: float = DEFAULT_TOL) -> np.ndarray:
    """Selected Green columns g(., y) for y in `targets`, shape (|B|, len(targets))."""
    idx = _check_domain(g, domain)
    t = np.asarray(targets, dtype=np.int64)
    if not domain.contains(t).all():
        raise ParameterError("every target must lie in the domain")
    rhs = np.zeros((idx.size, t.size))
    rhs[np.searchsorted(idx, t), np.arange(t.size)] = 1.0
    kernel = _restricted_kernel(g, idx, domain)
    system = sparse.eye(idx.size, format="csr") - kernel
    return _solve_columns(system, rhs, tol)


def expected_exit_time(kg: KilledGreen, x: int) -> float:
    """E_x[exit time] = sum_y g(x, y) (the Green row-sum identity)."""
    return kg.row_sum(x)


def exit_time_survival(g: TorusGeometry, domain: SiteSet, x: int, horizon: int) -> np.ndarray:
    """Exact tail probabilities P_x[T > k] for k = 0..horizon via kernel powers."""
    idx = _check_domain(g, domain)
    pos = np.searchsorted(idx, x)
    if pos >= idx.size or idx[pos] != x:
        raise ParameterError("start site must lie in the domain")
    kernel = _restricted_kernel(g, idx, domain)
    out = np.empty(horizon + 1)
    vec = np.zeros(idx.size)
    vec[pos] = 1.0
    for k in range(horizon + 1):
        out[k] = vec.sum()
        vec = kernel.T @ vec
    return out


def hit_prob_exact(g: TorusGeometry, target: SiteSet, domain: SiteSet, x: int,
                   tol: float = DEFAULT_TOL) -> float:
    """Exact P_x[the walk enters `target` no later than it exits `domain`].

    Boundary-value solve: value 1 on the target, 0 outside the domain,
    harmonic in between.
    """
    idx = _check_domain(g, domain)
    if not target.issubset(domain):
        raise ParameterError("target must be a subset of the domain")
    if len(target) == 0:
        raise ParameterError("target must be nonempty")
    if x not in domain:
        raise ParameterError("start site must lie in the domain")
    if x in target:
        return 1.0

    inner = SiteSet.from_indices(g, idx[~target.contains(idx)])
    inner_idx = inner.indices()
    nbrs = g.neighbors_of(inner_idx)
    kernel = _restricted_kernel(g, inner_idx, inner)
    source = target.contains(nbrs).sum(axis=1) / (2.0 * g.dim)
    system = sparse.eye(inner_idx.size, format="csr") - kernel
    h = _solve_columns(system, source, tol)
    return float(h[np.searchsorted(inner_idx, x)])


@dataclass(frozen=True)
class SandwichBounds:
    """Two-sided Green-ratio bounds around the exact hitting probability."""

    lower: float
    upper: float
    exact: float

    @property
    def gap(self) -> float:
        return self.upper - self.lower


def sandwich(g: TorusGeometry, target: SiteSet, domain: SiteSet, x: int,
             tol: float = DEFAULT_TOL) -> SandwichBounds:
    """Green-ratio sandwich for P_x[H(target) <= T(domain)].

    lower = sum_y g(x,y) / sup_{y in target} sum_{y'} g(y,y') and upper uses
    the infimum; both row sums come from the same exact column solve.
    """
    idx = _check_domain(g, domain)
    t = target.indices()
    if t.size == 0 or not target.issubset(domain):
        raise ParameterError("target must be a nonempty subset of the domain")
    if x not in domain:
        raise ParameterError("start site must lie in the domain")

    cols = green_columns(g, domain, t, tol)
    numerator = float(cols[np.searchsorted(idx, x)].sum())
    row_sums = cols[np.searchsorted(idx, t)].sum(axis=1)
    lower = numerator / float(row_sums.max())
    upper = numerator / float(row_sums.min())
    exact = hit_prob_exact(g, target, domain, x, tol)
    return SandwichBounds(lower=lower, upper=upper, exact=exact)


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def green_csv(kg: KilledGreen) -> str:
    out = io.StringIO()
    out.write("x_index,y_index,g_value\n")
    for i, x in enumerate(kg.domain):
        for j, y in enumerate(kg.domain):
            out.write(f"{x},{y},{kg.values[i, j]:.12g}\n")
    return out.getvalue()


def bounds_csv(bounds: SandwichBounds) -> str:
    return ("lower,exact,upper,gap\n"
            f"{bounds.lower:.12g},{bounds.exact:.12g},{bounds.upper:.12g},{bounds.gap:.12g}\n")
