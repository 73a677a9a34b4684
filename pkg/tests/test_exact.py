from collections import defaultdict
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gwemig.errors import DepthTooShallow, InvalidParam, TruncationTooTight
from gwemig.exact import (
    DpResult, expected_tau_bounds, forward_dp_tau, perpetuity_bracket, sum_minus_emigration,
)
from gwemig.laws import GenerationModel, const, gw_extinction_prob, pareto, pmf

# -- independent brute-force oracle ------------------------------------------------


def _frac_law(law):
    return [(int(v), Fraction(repr(float(p)))) for v, p in zip(law.values, law.probs)]


def _joint_first_and_y(model):
    """Exact joint law of (first offspring, Y) under the model's coupling."""
    xi, y = _frac_law(model.offspring), _frac_law(model.emigration)
    if model.coupling == "independent":
        return {(a, b): p * q for a, p in xi for b, q in y}
    # comonotone: both are quantiles of one uniform, so merge CDF levels
    def cuts(law):
        c, out = Fraction(0), []
        for v, p in law:
            c += p
            out.append((c, v))
        # float probabilities need not sum to exactly 1 as rationals
        out[-1] = (Fraction(1), out[-1][1])
        return out
    cx, cy = cuts(xi), cuts(y)
    levels = sorted({c for c, _ in cx} | {c for c, _ in cy})
    joint, prev = defaultdict(Fraction), Fraction(0)
    for lv in levels:
        if lv > prev:
            a = next(v for c, v in cx if c >= lv)
            b = next(v for c, v in cy if c >= lv)
            joint[(a, b)] += lv - prev
        prev = lv
    return dict(joint)


def _convolve(d1, d2):
    out = defaultdict(Fraction)
    for a, p in d1.items():
        for b, q in d2.items():
            out[a + b] += p * q
    return out


def _oracle_step(model, z, cache):
    if z in cache:
        return cache[z]
    xi = dict(_frac_law(model.offspring))
    # laws of sums of z - 1 offspring, built up one individual at a time
    powers = cache.setdefault("powers", [{0: Fraction(1)}])
    while len(powers) < z:
        powers.append(_convolve(powers[-1], xi))
    out = defaultdict(Fraction)
    for (a, b), p in _joint_first_and_y(model).items():
        for s, q in powers[z - 1].items():
            out[max(a + s - b, 0)] += p * q
    cache[z] = dict(out)
    return cache[z]


def oracle_tau_cdf(model, k, N):
    """Exact P[tau < n | Z_0 = k] for n = 1..N with rational arithmetic."""
    dist, cache, res = {k: Fraction(1)}, {}, [Fraction(0)]
    for _ in range(1, N):
        nxt = defaultdict(Fraction)
        for z, p in dist.items():
            if z == 0:
                nxt[0] += p
                continue
            for w, q in _oracle_step(model, z, cache).items():
                nxt[w] += p * q
        dist = nxt
        res.append(dist.get(0, Fraction(0)))
    return res


@st.composite
def small_models(draw):
    xv = draw(st.lists(st.integers(0, 3), min_size=2, max_size=3, unique=True))
    xw = draw(st.lists(st.integers(1, 5), min_size=len(xv), max_size=len(xv)))
    yv = draw(st.lists(st.integers(0, 3), min_size=1, max_size=3, unique=True))
    yw = draw(st.lists(st.integers(1, 5), min_size=len(yv), max_size=len(yv)))
    xp = np.array(xw) / sum(xw)
    if float(np.dot(xv, xp)) <= 1.05:
        xv, xp = [0, 3], np.array([0.4, 0.6])
    coupling = draw(st.sampled_from(["independent", "comonotone"]))
    return GenerationModel(pmf(xv, xp), pmf(yv, np.array(yw) / sum(yw)), coupling)


# -- forward DP ----------------------------------------------------------------------


def test_dp_two_point_values():
    m = GenerationModel(pmf({0: 0.5, 3: 0.5}), const(1))
    res = forward_dp_tau(m, 1, 4)
    assert res.probs == pytest.approx([0, 0.5, 0.625, 0.69140625], abs=1e-15)
    assert res.error_bound == 0


def test_dp_deterministic_extinction():
    m = GenerationModel(const(2), const(2))
    res = forward_dp_tau(m, 1, 3)
    assert res.probs == [0.0, 1.0, 1.0]
    eb = expected_tau_bounds(m, 1, 10)
    assert eb.method == "exact" and eb.lower == pytest.approx(1) and eb.upper == pytest.approx(1)


def test_dp_comonotone_values():
    m = GenerationModel(pmf({0: 0.5, 3: 0.5}), pmf({0: 0.5, 2: 0.5}), "comonotone")
    assert forward_dp_tau(m, 1, 4).probs == pytest.approx([0, 0.5, 0.75, 0.875], abs=1e-15)
    assert [float(x) for x in oracle_tau_cdf(m, 1, 4)] == [0, 0.5, 0.75, 0.875]


@settings(max_examples=30, deadline=None)
@given(small_models(), st.integers(1, 3))
def test_dp_matches_brute_force(model, k):
    N = 5
    res = forward_dp_tau(model, k, N)
    exact = [float(x) for x in oracle_tau_cdf(model, k, N)]
    assert res.probs == pytest.approx(exact, abs=1e-12 + res.error_bound)
    for lo, hi, ex in zip(res.probs, res.probs_upper, exact):
        assert lo - 1e-12 <= ex <= hi + 1e-12


@settings(max_examples=20, deadline=None)
@given(small_models())
def test_dp_monotone(model):
    a = forward_dp_tau(model, 1, 8)
    b = forward_dp_tau(model, 3, 8)
    assert all(x <= y + 1e-15 for x, y in zip(a.probs, a.probs[1:]))
    # larger initial populations die out later
    assert all(y <= x + 1e-12 for x, y in zip(a.probs, b.probs))
    assert all(l <= u + 1e-15 for l, u in zip(a.probs, a.probs_upper))


def test_dp_transient_plateau():
    # with no emigration the chain dies iff the GW tree does
    m = GenerationModel(pmf({0: 0.5, 3: 0.5}), const(0))
    res = forward_dp_tau(m, 1, 60, tol=1e-6)
    q = gw_extinction_prob(m.offspring)
    assert res.probs[-1] == pytest.approx(q, abs=1e-6 + res.error_bound)
    eb = expected_tau_bounds(m, 1, 60, tol=1e-6)
    assert eb.infinite and eb.upper is None and eb.method == "plateau"


def test_dp_heavy_tail_certified():
    m = GenerationModel(pmf({0: 0.25, 2: 0.75}), pareto(1.0))
    res = forward_dp_tau(m, 1, 6, tol=1e-3)
    assert res.error_bound <= 1e-3
    assert all(a <= b for a, b in zip(res.probs, res.probs_upper))


def test_dp_errors():
    m = GenerationModel(pmf({0: 0.25, 3: 0.75}), pareto(1.0))
    with pytest.raises(TruncationTooTight):
        forward_dp_tau(m, 3, 6, M=8, tol=1e-12)
    with pytest.raises(InvalidParam):
        forward_dp_tau(m, 0, 6)
    with pytest.raises(InvalidParam):
        forward_dp_tau(m, 5, 6, M=4)


def test_dp_json():
    m = GenerationModel(const(2), const(2))
    data = forward_dp_tau(m, 1, 2).to_json()
    assert '"probs": [0.0, 1.0]' in data and '"error_bound": 0.0' in data
    assert isinstance(forward_dp_tau(m, 1, 2), DpResult)


def test_expected_tau_geometric():
    # from state 1: Y = 2 kills, Y = 1 keeps the chain at 1, so tau is
    # geometric with mean 2
    m = GenerationModel(const(2), pmf({1: 0.5, 2: 0.5}))
    eb = expected_tau_bounds(m, 1, 40, tol=1e-9)
    assert eb.method == "geometric extrapolation"
    assert eb.lower <= 2.0 <= eb.upper
    assert eb.upper - eb.lower < 1e-8
    # comonotone pairs (1, 1) and (2, 2) both kill state 1 at once
    m2 = GenerationModel(pmf({1: 0.5, 2: 0.5}), pmf({1: 0.5, 2: 0.5}), "comonotone")
    eb2 = expected_tau_bounds(m2, 1, 5)
    assert eb2.method == "exact" and eb2.upper == pytest.approx(1.0)


def test_sum_minus_emigration_matches_oracle():
    m = GenerationModel(pmf({0: 0.2, 1: 0.3, 3: 0.5}), pmf({0: 0.5, 2: 0.5}), "comonotone")
    for n in (1, 2, 3):
        pm, vmin, kill, explode = sum_minus_emigration(m, n, optimistic=True)
        assert kill == 0 and explode == 0
        joint = _joint_first_and_y(m)
        rest = {0: Fraction(1)}
        for _ in range(n - 1):
            rest = _convolve(rest, dict(_frac_law(m.offspring)))
        exact = defaultdict(Fraction)
        for (a, b), p in joint.items():
            for s, q in rest.items():
                exact[a + s - b] += p * q
        for v, p in exact.items():
            assert pm[v - vmin] == pytest.approx(float(p), abs=1e-15)


# -- perpetuity bracket ----------------------------------------------------------


def test_bracket_trivial():
    assert perpetuity_bracket(2, const(1), 1, 10).lower == 1.0
    b = perpetuity_bracket(2, const(1), 2, 10)
    assert (b.lower, b.upper) == (1.0, 1.0)


def test_bracket_uniform_perpetuity():
    # sum_j 2^-j Y_j with Y in {0, 3} is 3 U, U uniform on (0, 1)
    b = perpetuity_bracket(2, pmf({0: 0.5, 3: 0.5}), 2, 40)
    assert b.lower <= 2 / 3 <= b.upper
    assert b.width < 1e-9


def test_bracket_narrows_with_depth():
    y = pmf({0: 0.5, 1: 0.25, 4: 0.25})
    widths = [perpetuity_bracket(2, y, 2, d).width for d in (5, 10, 20, 40)]
    assert all(b <= a for a, b in zip(widths, widths[1:]))
    with pytest.raises(DepthTooShallow):
        perpetuity_bracket(2, y, 2, 3, tol=1e-6)


def test_bracket_errors():
    with pytest.raises(InvalidParam):
        perpetuity_bracket(1, const(1), 1, 5)
    with pytest.raises(InvalidParam):
        perpetuity_bracket(2, pareto(1.0), 1, 5)
