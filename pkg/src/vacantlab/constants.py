"""Dimension-dependent constants and the scale ladder.

Numeric evaluation of the quantities that parametrize the experiments: the
return probability q(d) of simple random walk on Z^d, the dimension
threshold derived from it, and the ladder of polynomial time/length scales
(revisit gap, surround window, early horizon, excursion radii and budget).

All logarithms here are natural.  Integer brackets ``[x]`` are floors; for
scales of the exact form N**(p/q) the floor is computed in integer
arithmetic so that e.g. ``[1000**(4/3)] == 10000`` instead of the float
answer 9999.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import ParameterError

__all__ = [
    "ScaleSet",
    "derive_scales",
    "floor_power",
    "log_length",
    "full_horizon",
    "excursion_budget",
    "return_prob_q",
    "dim_threshold_predicate",
    "compute_dim_threshold",
    "MCReturnEstimate",
    "mc_return_probability",
]


def _integer_root(x: int, r: int) -> int:
    """Exact floor(x ** (1/r)) for x >= 0 via integer Newton iteration."""
    if x < 2 or r == 1:
        return x
    k = 1 << -(-x.bit_length() // r)      # 2**ceil(bits/r) >= x**(1/r)
    while True:
        nk = ((r - 1) * k + x // k ** (r - 1)) // r
        if nk >= k:
            break
        k = nk
    while k**r > x:
        k -= 1
    while (k + 1) ** r <= x:
        k += 1
    return k


def floor_power(n: int, num: int, den: int) -> int:
    """Exact ``floor(n ** (num/den))`` for integers ``n >= 1``, ``num, den >= 1``.

    All-integer arithmetic, so rational exponents never lose an integer to
    float round-off (e.g. 1000**(4/3) is exactly 10000).
    """
    if n < 1 or num < 1 or den < 1:
        raise ParameterError("floor_power requires positive integer arguments")
    return _integer_root(n**num, den)


def log_length(side: int, coeff: float) -> int:
    """``[coeff * ln(side)]``, the generic logarithmic segment length."""
    if side < 1 or coeff < 0:
        raise ParameterError("log_length requires side >= 1 and coeff >= 0")
    return math.floor(coeff * math.log(side))


def full_horizon(side: int, dim: int, steps_per_site: float) -> int:
    """``[steps_per_site * side**dim]``, the full walk horizon."""
    if steps_per_site < 0:
        raise ParameterError("steps_per_site must be >= 0")
    return math.floor(steps_per_site * side**dim)


def excursion_budget(steps_per_site: float, inner_radius: int, dim: int,
                     budget_coeff: float = 1.0) -> int:
    """``[budget_coeff * steps_per_site * inner_radius**(dim-2)]`` excursions."""
    if budget_coeff <= 0:
        raise ParameterError("budget_coeff must be > 0")
    return math.floor(budget_coeff * steps_per_site * inner_radius ** (dim - 2))


@dataclass(frozen=True)
class ScaleSet:
    """The fixed exponents and the derived integer scales for one (side, dim).

    ``search_exp < gap_exp < window_exp < horizon_exp`` and the corresponding
    integer scales satisfy ``search_radius <= revisit_gap <= window_len <=
    early_horizon`` for every side >= 2.
    """

    side: int
    dim: int
    steps_per_site: float
    count_exp: float
    budget_coeff: float

    # exponents
    search_exp: float      # 1 / (3 (dim - 2))
    gap_exp: float         # 4/3
    window_exp: float      # 4/3 + 1/100
    horizon_exp: float     # 2 - 1/10

    # integer scales
    search_radius: int     # [side ** search_exp]
    revisit_gap: int       # [side ** gap_exp]
    window_len: int        # [side ** window_exp]
    early_horizon: int     # [side ** horizon_exp]

    seg_len_formula: int   # [(300 dim ln(2 dim))**-1 ln side]; 0 at desk scale
    inner_radius: int      # [(ln side)**2]
    outer_radius: int      # [(inner_radius**dim * side**count_exp)**(1/(dim+1))]
    budget: int            # [budget_coeff * steps_per_site * inner_radius**(dim-2)]
    horizon: int           # [steps_per_site * side**dim]

    radius_window_ok: bool  # 10*inner_radius <= outer_radius <= [side**(count_exp/dim)]


def derive_scales(side: int, dim: int, steps_per_site: float, count_exp: float,
                  budget_coeff: float = 1.0) -> ScaleSet:
    """Evaluate the whole scale ladder at one parameter point."""
    if side < 3:
        raise ParameterError("side must be >= 3")
    if dim < 3:
        raise ParameterError("dim must be >= 3 (search_exp needs dim - 2 >= 1)")
    if steps_per_site <= 0:
        raise ParameterError("steps_per_site must be > 0")
    if not 0 < count_exp < 1:
        raise ParameterError("count_exp must lie in (0, 1)")
    if budget_coeff <= 0:
        raise ParameterError("budget_coeff must be > 0")

    inner = math.floor(math.log(side) ** 2)
    outer = math.floor((inner**dim * side**count_exp) ** (1.0 / (dim + 1)))
    seg_len = log_length(side, 1.0 / (300 * dim * math.log(2 * dim)))
    radius_cap = math.floor(side ** (count_exp / dim))

    return ScaleSet(
        side=side,
        dim=dim,
        steps_per_site=steps_per_site,
        count_exp=count_exp,
        budget_coeff=budget_coeff,
        search_exp=1.0 / (3 * (dim - 2)),
        gap_exp=4.0 / 3.0,
        window_exp=4.0 / 3.0 + 0.01,
        horizon_exp=1.9,
        search_radius=floor_power(side, 1, 3 * (dim - 2)),
        revisit_gap=floor_power(side, 4, 3),
        window_len=floor_power(side, 403, 300),
        early_horizon=floor_power(side, 19, 10),
        seg_len_formula=seg_len,
        inner_radius=inner,
        outer_radius=outer,
        budget=excursion_budget(steps_per_site, inner, dim, budget_coeff),
        horizon=full_horizon(side, dim, steps_per_site),
        radius_window_ok=(10 * inner <= outer <= radius_cap),
    )


# ---------------------------------------------------------------------------
# Return probability q(d) and the dimension threshold
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def return_prob_q(dim: int) -> float:
    """Probability that simple random walk on Z**dim ever revisits its start.

    For dim <= 2 the walk is recurrent and the value is exactly 1.  For
    dim >= 3 it equals ``1 - 1/G`` where ``G = int_0^inf (e^-t I0(t/d))^d dt``
    is the expected number of visits to the origin.  The integrand is
    evaluated as ``i0e(t/d)**d`` (the exponentially scaled Bessel function
    absorbs the e^-t factor exactly), which neither overflows nor cancels.
    """
    if dim < 1:
        raise ParameterError("dimension must be >= 1")
    if dim <= 2:
        return 1.0

    def integrand(t: float) -> float:
        return float(special.i0e(t / dim) ** dim)

    # Split at a multiple of dim: beyond it the integrand is a smooth
    # power-law tail that the infinite-interval transform handles well.
    cut = 40.0 * dim
    head, _ = integrate.quad(integrand, 0.0, cut, limit=400, epsabs=1e-13, epsrel=1e-11)
    tail, _ = integrate.quad(integrand, cut, np.inf, limit=400, epsabs=1e-13, epsrel=1e-11)
    visits = head + tail
    return 1.0 - 1.0 / visits


def dim_threshold_predicate(dim: int) -> float:
    """Value of ``49 * (2/dim + (1 - 2/dim) * q(dim - 2))``; threshold holds when < 1."""
    if dim < 5:
        raise ParameterError("predicate needs dim >= 5")
    return 49.0 * (2.0 / dim + (1.0 - 2.0 / dim) * return_prob_q(dim - 2))


def compute_dim_threshold(search_limit: int = 400, band: int = 50) -> tuple[int, dict[int, float]]:
    """Smallest dim >= 5 whose predicate is < 1 and stays < 1 over the next `band` dims.

    Monotonicity of the predicate is verified on the band rather than
    assumed.  Returns the threshold and the full evaluated trace.
    """
    trace: dict[int, float] = {}

    def value(d: int) -> float:
        if d not in trace:
            trace[d] = dim_threshold_predicate(d)
        return trace[d]

    for d in range(5, search_limit + 1):
        if value(d) < 1.0 and all(value(d2) < 1.0 for d2 in range(d, d + band + 1)):
            return d, trace
    raise ParameterError(f"no threshold found below dim={search_limit}")


# ---------------------------------------------------------------------------
# Monte Carlo oracle for q(d)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MCReturnEstimate:
    dim: int
    walks: int
    max_steps: int
    seed: int
    returned: int
    estimate: float
    stderr: float
    truncation_bound: float


def return_truncation_bound(dim: int, max_steps: int) -> float:
    """First-order bound on the probability of a first return after `max_steps`.

    Return can only happen at even times 2n with chance at most the
    local-CLT envelope ``2 (dim/(4 pi n))**(dim/2)``; summing the envelope
    beyond the cap bounds the mass the truncated estimator misses.
    """
    if dim < 3:
        raise ParameterError("truncation bound defined for transient dims >= 3")
    m = max(max_steps // 2, 1)
    c = 2.0 * (dim / (4.0 * math.pi)) ** (dim / 2.0)
    return c * m ** (1.0 - dim / 2.0) / (dim / 2.0 - 1.0)


def _pair_tables(dim: int) -> np.ndarray:
    """Displacement of every ordered pair of unit steps, shape ((2d)^2, d)."""
    steps = np.zeros((2 * dim, dim), dtype=np.int64)
    for axis in range(dim):
        steps[2 * axis, axis] = -1
        steps[2 * axis + 1, axis] = +1
    pairs = steps[:, None, :] + steps[None, :, :]
    return pairs.reshape(-1, dim)


def _compile_kernels():
    """Compile the jitted walk kernels on first use.

    Both kernels advance the walk two steps at a time: the lattice is
    bipartite, so a first return can only happen at an even time and
    checking the origin after each step pair is exact.  Bounded uniforms
    come from 32-bit halves of xorshift64* outputs via Lemire's
    multiply-shift with rejection, which is exactly unbiased.
    """
    import numba

    u0 = np.uint64(0)
    u1 = np.uint64(1)
    gamma = np.uint64(0x9E3779B97F4A7C15)
    mix1 = np.uint64(0xBF58476D1CE4E5B9)
    mix2 = np.uint64(0x94D049BB133111EB)
    xmul = np.uint64(0x2545F4914F6CDD1D)
    s30 = np.uint64(30)
    s27 = np.uint64(27)
    s31 = np.uint64(31)
    s12 = np.uint64(12)
    s25 = np.uint64(25)
    s32 = np.uint64(32)
    lo32 = np.uint64(0xFFFFFFFF)

    @numba.njit(cache=True, parallel=True, nogil=True)
    def _returns_3d(n_walks, n_quads, leftover_pair, master,
                    ax, ay, az, bx, by, bz, px, py, pz):
        # Four steps per table code: a* holds the displacement after the
        # first step pair, b* after both pairs; p* are single-pair tables
        # for an odd trailing pair.
        returned = 0
        n_quad = np.uint64(1296)
        t_quad = np.uint64(2**32 % 1296)
        n_pair = np.uint64(36)
        t_pair = np.uint64(2**32 % 36)
        for w in numba.prange(n_walks):
            z0 = master + (np.uint64(w) + u1) * gamma
            z0 = (z0 ^ (z0 >> s30)) * mix1
            z0 = (z0 ^ (z0 >> s27)) * mix2
            state = z0 ^ (z0 >> s31)
            if state == u0:
                state = gamma
            x = 0
            y = 0
            z = 0
            r = u0
            halves = 0
            hit = False
            for _ in range(n_quads):
                v = u0
                while True:
                    if halves == 0:
                        state ^= state >> s12
                        state ^= state << s25
                        state ^= state >> s27
                        r = state * xmul
                        halves = 2
                    h = r & lo32
                    r = r >> s32
                    halves -= 1
                    m = h * n_quad
                    if (m & lo32) >= t_quad:
                        v = m >> s32
                        break
                x1 = x + ax[v]
                y1 = y + ay[v]
                z1 = z + az[v]
                if (x1 | y1 | z1) == 0:
                    hit = True
                    break
                x += bx[v]
                y += by[v]
                z += bz[v]
                if (x | y | z) == 0:
                    hit = True
                    break
            if (not hit) and leftover_pair:
                v = u0
                while True:
                    if halves == 0:
                        state ^= state >> s12
                        state ^= state << s25
                        state ^= state >> s27
                        r = state * xmul
                        halves = 2
                    h = r & lo32
                    r = r >> s32
                    halves -= 1
                    m = h * n_pair
                    if (m & lo32) >= t_pair:
                        v = m >> s32
                        break
                x += px[v]
                y += py[v]
                z += pz[v]
                if (x | y | z) == 0:
                    hit = True
            if hit:
                returned += 1
        return returned

    @numba.njit(cache=True, parallel=True, nogil=True)
    def _returns_any_dim(dim, n_walks, n_pairs_total, master, deltas, n_codes):
        returned = 0
        t_rej = np.uint64(2**32) % n_codes
        for w in numba.prange(n_walks):
            z0 = master + (np.uint64(w) + u1) * gamma
            z0 = (z0 ^ (z0 >> s30)) * mix1
            z0 = (z0 ^ (z0 >> s27)) * mix2
            state = z0 ^ (z0 >> s31)
            if state == u0:
                state = gamma
            pos = np.zeros(dim, dtype=np.int64)
            r = u0
            halves = 0
            for _ in range(n_pairs_total):
                v = u0
                while True:
                    if halves == 0:
                        state ^= state >> s12
                        state ^= state << s25
                        state ^= state >> s27
                        r = state * xmul
                        halves = 2
                    h = r & lo32
                    r = r >> s32
                    halves -= 1
                    m = h * n_codes
                    if (m & lo32) >= t_rej:
                        v = m >> s32
                        break
                at_origin = True
                for axis in range(dim):
                    pos[axis] += deltas[v, axis]
                    if pos[axis] != 0:
                        at_origin = False
                if at_origin:
                    returned += 1
                    break
        return returned

    return _returns_3d, _returns_any_dim


_KERNELS = None


def mc_return_probability(dim: int, walks: int, max_steps: int, seed: int) -> MCReturnEstimate:
    """Estimate q(dim) by direct simulation: the fraction of seeded walks on
    Z^dim that revisit the origin within `max_steps` steps.

    Fully deterministic given (seed, walks, max_steps): walk ``w`` uses the
    SplitMix64 stream seed ``stream_seed(seed, w)``.  Odd step budgets behave
    like the next lower even budget since returns happen only at even times.
    The estimate undershoots q(dim) by at most `truncation_bound` (returns
    later than the cap); for dim = 3 and a 1e6-step cap that bound is ~7e-4.
    """
    global _KERNELS
    if dim < 1:
        raise ParameterError("dimension must be >= 1")
    if walks < 1 or max_steps < 0:
        raise ParameterError("walks must be >= 1 and max_steps >= 0")
    if _KERNELS is None:
        _KERNELS = _compile_kernels()
    returns_3d, returns_any = _KERNELS

    half_cap = max_steps // 2
    if dim == 3:
        pairs = _pair_tables(3)
        quad_a = np.repeat(pairs, 36, axis=0)
        quad_b = quad_a + np.tile(pairs, (36, 1))
        returned = returns_3d(
            walks, half_cap // 2, half_cap % 2 == 1, np.uint64(seed),
            quad_a[:, 0].copy(), quad_a[:, 1].copy(), quad_a[:, 2].copy(),
            quad_b[:, 0].copy(), quad_b[:, 1].copy(), quad_b[:, 2].copy(),
            pairs[:, 0].copy(), pairs[:, 1].copy(), pairs[:, 2].copy(),
        )
    else:
        deltas = _pair_tables(dim)
        returned = returns_any(dim, walks, half_cap, np.uint64(seed),
                               deltas, np.uint64(deltas.shape[0]))

    p = returned / walks
    stderr = math.sqrt(max(p * (1.0 - p), 1e-300) / walks)
    bound = return_truncation_bound(dim, max_steps) if dim >= 3 else float("nan")
    return MCReturnEstimate(
        dim=dim,
        walks=walks,
        max_steps=max_steps,
        seed=seed,
        returned=int(returned),
        estimate=p,
        stderr=stderr,
        truncation_bound=bound,
    )
