import math

import numpy as np
import pytest

from vacantlab import constants as C
from vacantlab.errors import ParameterError

import oracles

# literature value of the d=3 return probability (Watson's integral)
Q3_REFERENCE = 0.3405373295509994
# recorded on the first verified build from compute_dim_threshold()
DIM_THRESHOLD_GOLDEN = 123


def test_floor_power_exact_on_rational_powers():
    assert C.floor_power(1000, 4, 3) == 10000        # float pow would say 9999
    assert C.floor_power(12, 19, 10) == 112
    assert C.floor_power(12, 403, 300) == 28
    assert C.floor_power(1, 5, 7) == 1
    rng = np.random.default_rng(1)
    for _ in range(300):
        n = int(rng.integers(1, 10**6))
        num = int(rng.integers(1, 8))
        den = int(rng.integers(1, 8))
        k = C.floor_power(n, num, den)
        assert k**den <= n**num < (k + 1) ** den


def test_scale_ladder_examples():
    s = C.derive_scales(1000, 5, 1.0, 0.5)
    assert s.revisit_gap == 10000
    assert s.inner_radius == 47
    assert s.horizon == 1000**5
    assert C.log_length(10**6, 1.0 / (300 * 5 * math.log(10))) == 0
    s12 = C.derive_scales(12, 4, 0.3, 0.5)
    assert s12.early_horizon == 112
    assert s12.window_len == 28
    assert s12.horizon == math.floor(0.3 * 12**4)


def test_scale_ladder_ordering_logarithmic_sweep():
    sides = sorted({int(x) for x in np.logspace(math.log10(3), 6, 40)})
    for side in sides:
        for dim in (3, 4, 7, 20):
            s = C.derive_scales(side, dim, 0.7, 0.4)
            assert s.search_radius <= s.revisit_gap <= s.window_len <= s.early_horizon
            assert s.search_exp < s.gap_exp < s.window_exp < s.horizon_exp


def test_excursion_budget_monotone_in_occupation():
    values = [C.excursion_budget(u, 5, 4, 1.0) for u in (0.1, 0.5, 1.0, 2.0, 5.0)]
    assert values == sorted(values)
    assert C.excursion_budget(0.01, 2, 3, 1.0) == 0   # floors to zero at desk scale


def test_derive_scales_guards():
    for bad in [dict(side=2), dict(dim=2), dict(steps_per_site=0.0),
                dict(count_exp=1.5), dict(budget_coeff=0.0)]:
        kw = dict(side=100, dim=5, steps_per_site=1.0, count_exp=0.5,
                  budget_coeff=1.0)
        kw.update(bad)
        with pytest.raises(ParameterError):
            C.derive_scales(**kw)


def test_radius_window_validation_reported():
    # at side 1000, dim 5: inner = 47, outer = [(47^5 * 1000^.5)^(1/6)] = 42 < 10*47
    s = C.derive_scales(1000, 5, 1.0, 0.5)
    assert s.outer_radius == math.floor((47**5 * 1000**0.5) ** (1 / 6))
    assert s.radius_window_ok == (10 * s.inner_radius <= s.outer_radius
                                  <= math.floor(1000 ** (0.5 / 5)))


def test_return_prob_recurrent_dims():
    assert C.return_prob_q(1) == 1.0
    assert C.return_prob_q(2) == 1.0
    with pytest.raises(ParameterError):
        C.return_prob_q(0)


def test_return_prob_q3_matches_reference():
    assert C.return_prob_q(3) == pytest.approx(Q3_REFERENCE, abs=1e-9)


def test_return_prob_strictly_decreasing():
    values = [C.return_prob_q(d) for d in range(3, 60)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_return_prob_asymptotics():
    assert 2 * 50 * C.return_prob_q(50) == pytest.approx(1.0, rel=0.1)
    assert 2 * 100 * C.return_prob_q(100) == pytest.approx(1.0, rel=0.1)


def test_threshold_predicate_and_golden_value():
    assert C.dim_threshold_predicate(5) == pytest.approx(29.6118, abs=1e-3)
    assert C.dim_threshold_predicate(5) > 1
    value, trace = C.compute_dim_threshold()
    assert value == DIM_THRESHOLD_GOLDEN
    assert trace[value] < 1 <= trace[value - 1]
    window = [trace[d] for d in range(value, value + 51)]
    assert all(v < 1 for v in window)


def test_mc_return_matches_exact_dp_small_caps():
    for dim, cap, walks in [(3, 2, 300_000), (3, 6, 200_000),
                            (2, 4, 200_000), (4, 4, 200_000)]:
        exact = oracles.return_prob_within_bf(dim, cap)
        est = C.mc_return_probability(dim, walks, cap, seed=17)
        sigma = math.sqrt(exact * (1 - exact) / walks)
        assert abs(est.estimate - exact) < 3.5 * sigma, (dim, cap, est.estimate, exact)


def test_mc_return_is_deterministic():
    a = C.mc_return_probability(3, 5000, 1000, seed=9)
    b = C.mc_return_probability(3, 5000, 1000, seed=9)
    assert a.returned == b.returned
    c = C.mc_return_probability(3, 5000, 1000, seed=10)
    assert c.returned != a.returned  # different stream


def test_truncation_bound_shrinks_with_cap():
    bounds = [C.return_truncation_bound(3, cap) for cap in (10**4, 10**5, 10**6)]
    assert bounds == sorted(bounds, reverse=True)
    assert C.return_truncation_bound(3, 10**6) < 1e-3
    with pytest.raises(ParameterError):
        C.return_truncation_bound(2, 100)
