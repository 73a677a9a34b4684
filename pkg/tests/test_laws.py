import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gwemig.errors import InvalidParam, NonNormalizable, NotSupercritical
from gwemig.laws import (
    GenerationModel, STATE_CAP, const, example1, gw_extinction_prob, log_plus_moment,
    make_law, pareto, pmf, power_moment_finite, sample, tail, truncated_pmf, x_log_x_moment,
)
from gwemig.process import draw_generation

# Values below were computed independently with mpmath (Euler-Maclaurin
# summation of the pmf form of each moment, 30 digits) and frozen.
PARETO25_MEAN = 2.3414872572509172
PARETO25_VAR = 2.0836753787534711
PARETO25_XLOGX = 2.1710170649581164
PARETO25_LOG = 0.79875711604479925
# sum_j log(1 + 1/j) / j: the integral of P[log Y > s] over s, piece by piece
PARETO1_LOG = 1.2577468869443696


@st.composite
def finite_laws(draw, max_value=6):
    vals = draw(st.lists(st.integers(0, max_value), min_size=1, max_size=5, unique=True))
    w = draw(st.lists(st.floats(0.05, 1.0), min_size=len(vals), max_size=len(vals)))
    p = np.array(w) / sum(w)
    return pmf(vals, p)


def test_constant_law():
    law = make_law({"type": "pmf", "values": [2], "probs": [1.0]})
    assert law.mean == 2 and law.variance == 0
    assert law.is_constant
    assert make_law({"type": "const", "value": 2}) == law


def test_two_point_moments():
    law = pmf({0: 0.25, 2: 0.75})
    assert law.mean == pytest.approx(1.5)
    assert law.variance == pytest.approx(0.75)


def test_example1_split():
    law = example1(1.0, 2)
    assert law.prob_zero() == pytest.approx(0.5)
    for n in range(2, 12):
        assert tail(law, math.exp(n)) == pytest.approx(1.0 / n)
    assert tail(law, math.exp(3)) == pytest.approx(1 / 3)


def test_descriptor_round_trip():
    for d in [{"type": "const", "value": 3},
              {"type": "pmf", "values": [0, 2], "probs": [0.25, 0.75]},
              {"type": "pareto", "alpha": 1.5, "t0": 2.0},
              {"type": "example1", "c": 1.0, "n0": 2}]:
        law = make_law(d)
        assert make_law(law.to_descriptor()) == law


def test_invalid_inputs():
    with pytest.raises(NonNormalizable):
        pmf({0: 0.5, 1: 0.4})
    with pytest.raises(InvalidParam):
        example1(3.0, 2)
    with pytest.raises(InvalidParam):
        pareto(0.0)
    with pytest.raises(InvalidParam):
        pmf({0: -0.1, 1: 1.1})


def test_tail_examples():
    assert tail(const(2), 1.5) == 1.0
    assert tail(pareto(1, 1), 8) == pytest.approx(0.125)
    t = np.array([0, 0.5, 1, 3, 7.9, 8, 100.0])
    assert np.all(np.diff(tail(pareto(1.3, 2.5), t)) <= 0)


def test_pareto_tail_formula():
    law = pareto(1.7, 3.0)
    for t in [3, 4, 10, 1000, 10 ** 9]:
        assert tail(law, t) == pytest.approx((t / 3.0) ** -1.7, rel=1e-12)
    assert tail(law, 2) == 1.0


@given(finite_laws(), st.floats(0, 8))
def test_tail_matches_pmf(law, t):
    direct = sum(p for v, p in zip(law.values, law.probs) if v > t)
    assert tail(law, t) == pytest.approx(direct, abs=1e-12)


@given(finite_laws())
def test_normalisation(law):
    p, rest = law.pmf_array(10)
    assert p.sum() + rest == pytest.approx(1.0, abs=1e-12)


def test_heavy_tail_normalisation():
    for law in [pareto(1, 1), pareto(0.5, 3.2), example1(1.0, 2), example1(0.7, 1)]:
        p, rest = law.pmf_array(5000)
        assert p.sum() + rest == pytest.approx(1.0, abs=1e-12)
        assert np.all(p >= 0)


def test_log_moments():
    assert log_plus_moment(const(0)) == 0
    assert math.isinf(log_plus_moment(example1(1.0, 2)))
    assert log_plus_moment(pareto(1, 1)) == pytest.approx(PARETO1_LOG, rel=1e-12)
    assert log_plus_moment(pareto(2.5, 1)) == pytest.approx(PARETO25_LOG, rel=1e-12)


def test_log_moment_quadrature_oracle():
    from scipy import integrate
    law = pareto(1.3, 2.0)

    def f(s):
        return float(tail(law, math.exp(s)))

    # integrate piecewise between the jumps at log of integers
    edges = [0.0] + [math.log(j) for j in range(1, 4000)]
    total = sum(integrate.quad(f, a, b)[0] for a, b in zip(edges, edges[1:]) if b > a)
    rest = integrate.quad(f, edges[-1], 60, limit=200)[0]
    assert log_plus_moment(law) == pytest.approx(total + rest, rel=1e-6)


def test_x_log_x():
    assert x_log_x_moment(const(2)) == pytest.approx(2 * math.log(2))
    assert x_log_x_moment(pmf({0: 0.25, 2: 0.75})) == pytest.approx(1.0397, abs=1e-4)
    assert math.isinf(x_log_x_moment(pareto(1, 1)))
    assert x_log_x_moment(pareto(2.5, 1)) == pytest.approx(PARETO25_XLOGX, rel=1e-10)


def test_pareto_mean_variance():
    law = pareto(2.5, 1)
    assert law.mean == pytest.approx(PARETO25_MEAN, rel=1e-12)
    assert law.variance == pytest.approx(PARETO25_VAR, rel=1e-10)
    assert math.isinf(pareto(1.5).variance)
    assert math.isinf(pareto(1.0).mean)


def test_power_moments():
    assert power_moment_finite(pareto(2.5), 2.4)
    assert not power_moment_finite(pareto(2.5), 2.5)
    assert power_moment_finite(const(3), 10)
    assert not power_moment_finite(example1(1.0, 2), 0.01)


def test_sample_constant():
    rng = np.random.default_rng(0)
    assert np.all(sample(const(2), rng, 100) == 2)


def test_sample_two_point_frequency():
    rng = np.random.default_rng(1)
    x = sample(pmf({0: 0.25, 2: 0.75}), rng, 10 ** 6)
    f = np.mean(x == 0)
    assert abs(f - 0.25) < 3 * math.sqrt(0.25 * 0.75 / 10 ** 6)


def test_sample_example1_tail():
    rng = np.random.default_rng(2)
    x = sample(example1(1.0, 2), rng, 10 ** 6)
    f = np.mean(x > math.exp(4))
    assert abs(f - 0.25) < 3 * math.sqrt(0.25 * 0.75 / 10 ** 6)


def _chi2_pvalue(x, law, top):
    p, rest = law.pmf_array(top)
    obs = np.bincount(np.minimum(x, top + 1), minlength=top + 2)
    exp = np.append(p, rest) * len(x)
    keep = exp > 0
    # pool small cells into their neighbour
    obs, exp = obs[keep], exp[keep]
    while exp.min() < 5:
        i = int(np.argmin(exp))
        j = i - 1 if i > 0 else i + 1
        obs[j] += obs[i]
        exp[j] += exp[i]
        obs, exp = np.delete(obs, i), np.delete(exp, i)
    return stats.chisquare(obs, exp).pvalue


@pytest.mark.parametrize("law,top", [
    (pmf({0: 0.25, 2: 0.75}), 3),
    (pmf({0: 0.1, 1: 0.2, 3: 0.3, 4: 0.4}), 5),
    (pareto(1.0, 1.0), 60),
    (pareto(2.5, 3.0), 40),
    (example1(1.0, 2), 30000),
])
def test_sampler_fidelity(law, top):
    rng = np.random.default_rng(3)
    x = np.asarray(sample(law, rng, 10 ** 5))
    assert _chi2_pvalue(x, law, top) > 0.001


def test_comonotone_marginals():
    model = GenerationModel(pmf({0: 0.3, 2: 0.3, 3: 0.4}), pmf({0: 0.5, 1: 0.2, 4: 0.3}),
                            coupling="comonotone")
    rng = np.random.default_rng(4)
    sizes = np.ones(10 ** 5, dtype=np.int64)
    s, y = draw_generation(model, sizes, rng)
    assert _chi2_pvalue(s, model.offspring, 4) > 0.001
    assert _chi2_pvalue(y, model.emigration, 5) > 0.001
    # the coupling is real: first offspring and emigration move together
    assert np.corrcoef(s, y)[0, 1] > 0.5


def test_quantile_monotone():
    u = np.linspace(0, 1, 2001)[:-1]
    for law in [pareto(1.0), example1(1.0, 2), pmf({0: 0.3, 5: 0.7})]:
        q = law.quantile(u)
        assert np.all(np.diff(q) >= 0)
        assert q.max() <= STATE_CAP


def test_extinction_probabilities():
    assert gw_extinction_prob(pmf({0: 0.25, 2: 0.75})) == pytest.approx(1 / 3, abs=1e-11)
    assert gw_extinction_prob(const(2)) == 0
    # 0.5 + 0.5 q^3 = q has roots 1 and (-1 +- sqrt 5) / 2
    assert gw_extinction_prob(pmf({0: 0.5, 3: 0.5})) == pytest.approx((math.sqrt(5) - 1) / 2,
                                                                    abs=1e-10)
    with pytest.raises(NotSupercritical):
        gw_extinction_prob(pmf({0: 0.5, 2: 0.5}))


@given(finite_laws(max_value=5))
def test_extinction_fixed_point(law):
    if law.mean <= 1.01:
        return
    q = gw_extinction_prob(law)
    f = float(np.dot(law.probs, q ** law.values.astype(float)))
    assert 0 <= q < 1
    assert f == pytest.approx(q, abs=1e-10)


def test_extinction_heavy_tail_error_bound():
    law = pareto(1.5, 1.0)
    q, err = gw_extinction_prob(law, with_error=True)
    assert q == 0.0 and err >= 0
    _, _, folded = truncated_pmf(law, 1000)
    assert folded == pytest.approx(1000 ** -1.5)


def test_model_validation():
    with pytest.raises(InvalidParam):
        GenerationModel(pareto(1.0), const(0))
    with pytest.raises(NotSupercritical):
        GenerationModel(pmf({0: 0.5, 2: 0.5}), const(0))
    m = GenerationModel(const(2), pmf({0: 0.5, 1: 0.5}), "comonotone")
    assert GenerationModel.from_descriptor(m.to_descriptor()) == m
