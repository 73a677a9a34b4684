import json
import math

import numpy as np
import pytest
from scipy import stats

from gwemig.errors import InvalidParam, OutOfScope
from gwemig.exact import forward_dp_tau
from gwemig.laws import GenerationModel, const, example1, pareto, pmf
from gwemig.mc import (
    BLOCK, SeedSpec, config_hash, coupled_decomposition_runs, decomposition_independence_test,
    dyadic_intervals, estimate_qk, estimate_tau_pmf, estimate_W, extinction_times,
    frequency_ci, grincevicius_experiment, independence_chi2, monotone_approach,
    one_step_extinction, pathwise_identity_violations, perpetuity_tail_bound,
    proposition1_experiment, renewal_excursions, run_blocks, theorem3_experiment,
    write_estimates_csv, write_manifest,
)
from gwemig.process import ProcessConfig

TWO_POINT = GenerationModel(pmf({0: 0.5, 3: 0.5}), const(1))


def test_seed_validation():
    with pytest.raises(InvalidParam):
        SeedSpec(-1)
    with pytest.raises(InvalidParam):
        run_blocks(lambda rng, n: n, 0, 1, "x")


@pytest.mark.parametrize("threads", [4, 16])
def test_thread_count_does_not_change_results(threads):
    trials = 3 * BLOCK + 17
    a, za = extinction_times(TWO_POINT, 30, trials, 123, threads=1, k=2)
    b, zb = extinction_times(TWO_POINT, 30, trials, 123, threads=threads, k=2)
    assert np.array_equal(a, b) and np.array_equal(za, zb)


def test_streams_differ_by_label_and_seed():
    f = lambda rng, n: rng.random(n)
    a = np.concatenate(run_blocks(f, 10, 1, "a"))
    b = np.concatenate(run_blocks(f, 10, 1, "b"))
    c = np.concatenate(run_blocks(f, 10, 2, "a"))
    assert not np.array_equal(a, b) and not np.array_equal(a, c)


def test_frequency_ci():
    e = frequency_ci(50, 100)
    assert e.point == 0.5 and e.stderr == pytest.approx(0.05)
    assert e.ci_low == pytest.approx(0.5 - 1.959964 * 0.05, abs=1e-6)
    z = frequency_ci(0, 1000)
    assert (z.ci_low, z.ci_high) == (0.0, 0.003)
    assert z.contains(0.001)
    s = e.scaled(2)
    assert s.point == 1.0 and s.stderr == pytest.approx(0.1)


def test_qk_matches_dp():
    trials = 20_000
    est = estimate_qk(TWO_POINT, 40, trials, 5, k=1)
    dp = forward_dp_tau(TWO_POINT, 1, 41, tol=1e-6)
    p = dp.probs[40]
    assert abs(est.point - p) < 4 * math.sqrt(p * (1 - p) / trials) + dp.error_bound


def test_tau_pmf_matches_dp():
    trials = 50_000
    res = estimate_tau_pmf(TWO_POINT, 6, trials, 8, k=1)
    dp = forward_dp_tau(TWO_POINT, 1, 7).probs
    for n in range(1, 6):
        p = dp[n] - dp[n - 1]
        got = res.pmf.get(n, 0.0)
        assert abs(got - p) < 4 * math.sqrt(p * (1 - p) / trials) + 1e-12
    assert res.censored + res.survived + sum(res.counts.values()) == trials


def test_survivors_not_censored_when_large():
    m = GenerationModel(const(2), const(1))
    est = estimate_qk(m, 10, 1000, 1, k=2, survival_threshold=100)
    assert est.point == 0 and est.censored == 0
    est = estimate_qk(m, 10, 1000, 1, k=2)
    assert est.censored == 1000


def test_renewal_excursions_share_tau_law():
    ex = renewal_excursions(TWO_POINT, 400, 20_000, 3, n_returns=2, k=1)
    done = ex[:, 1] > 0
    first, second = ex[done, 0], ex[done, 1]
    assert stats.ks_2samp(first, second).pvalue > 0.001
    # the first excursion is tau itself
    tau, _ = extinction_times(TWO_POINT, 400, 20_000, 4, k=1)
    assert stats.ks_2samp(ex[ex[:, 0] > 0, 0], tau[tau > 0]).pvalue > 0.001


def test_renewal_excursion_lengths_deterministic():
    m = GenerationModel(const(2), const(2))
    ex = renewal_excursions(m, 20, 10, 0, n_returns=3, k=1)
    assert np.all(ex == 1)


def test_w_survival_identity():
    m = GenerationModel(pmf({0: 0.25, 2: 0.75}), const(1))
    w = estimate_W(ProcessConfig(m, 5), 40, 20_000, 2)
    assert abs(w.p_w_above.point - w.p_alive.point) < 0.01
    assert w.saturated == 0
    assert w.occupancy(0, np.inf) == int(np.count_nonzero(w.w > 0))


def test_dyadic_intervals():
    iv = dyadic_intervals(0, 4, 1)
    assert (0.0, 4.0) in iv and (0.0, 2.0) in iv and (3.5, 4.0) in iv
    assert len(iv) == 1 + 2 + 4 + 8
    assert all(0 <= a < b <= 4 for a, b in iv)


def test_one_step_extinction():
    lo, hi = one_step_extinction(TWO_POINT, 1)
    assert lo == hi == pytest.approx(0.5)
    lo, hi = one_step_extinction(TWO_POINT, 2)
    assert lo == pytest.approx(0.25)


def test_theorem3_matches_perpetuity():
    # with xi = 2 and Y >= 2, Z dies out exactly when sum_n 2^-n Y_{n+1}
    # exceeds 2k, so both engines estimate the same probabilities
    y = pareto(1.0, 1.0)
    trials = 100_000
    rows = theorem3_experiment(GenerationModel(const(2), y), [16], trials=trials, seeds=7)
    prow, bound = grincevicius_experiment(0.5, y, [32], trials=trials, seeds=9)
    p1, p2 = rows[0].probability, prow[0].probability
    assert abs(p1.point - p2.point) < 4 * math.hypot(p1.stderr, p2.stderr)
    assert rows[0].reference == pytest.approx(1.0)
    assert prow[0].reference == pytest.approx(2.0)
    assert bound < 1e-6


def test_perpetuity_tail_bound():
    y = pareto(1.0, 1.0)
    b = [perpetuity_tail_bound(0.5, y, d, 1e-3) for d in (10, 20, 40)]
    assert all(x >= y_ for x, y_ in zip(b, b[1:]))
    assert perpetuity_tail_bound(0.0, y, 5, 1.0) == 0.0
    # a direct sum of the union-bound terms
    a, x, d = 0.5, 1.0, 30
    direct = sum(min(1.0, a ** n / (x * (1 - math.sqrt(a)) * math.sqrt(a) ** (n - d)))
                 for n in range(d, d + 400))
    assert b and perpetuity_tail_bound(a, y, d, x) == pytest.approx(direct, rel=1e-9)


def test_experiments_need_regular_variation():
    with pytest.raises(OutOfScope):
        theorem3_experiment(TWO_POINT, [4], trials=10)
    with pytest.raises(OutOfScope):
        proposition1_experiment(GenerationModel(const(2), example1(1.0, 2)), [1, 2], 5, 10, 0)
    with pytest.raises(InvalidParam):
        grincevicius_experiment(1.0, pareto(1.0), [2], trials=10)


def test_proposition1_decreasing():
    rows, trend = proposition1_experiment(TWO_POINT, [1, 2, 4, 8], 60, 20_000, 3)
    pts = [r.point for r in rows]
    assert trend["kendall_tau"] < 0
    assert pts[0] > pts[-1]
    assert monotone_approach(pts, 0.0)
    assert not monotone_approach([0.5, 0.1, 0.3], 0.0)


def test_decomposition_identity_and_independence():
    m = GenerationModel(pmf({0: 0.2, 1: 0.3, 3: 0.5}), pmf({0: 0.5, 1: 0.3, 3: 0.2}))
    runs = coupled_decomposition_runs(m, 1, 3, 5, 5000, 11)
    assert runs.shape == (3, 5000, 5)
    assert np.all(runs[:, :, 0] == np.array([[3], [1], [2]]))
    assert pathwise_identity_violations(runs) == 0
    res = decomposition_independence_test(m, 1, 3, 3, 5000, 12)
    assert res.verdict == "independent"


def test_chi2_detects_dependence():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 10, 5000)
    assert independence_chi2(x, x + rng.integers(0, 3, 5000)).verdict == "dependent"
    assert independence_chi2(x, rng.integers(0, 10, 5000)).p_value > 0.001
    assert independence_chi2(np.zeros(10), np.zeros(10)).verdict == "inconclusive"


def test_outputs(tmp_path):
    rows = [(1, frequency_ci(3, 10), 0.25), (2, frequency_ci(0, 10), None)]
    write_estimates_csv(tmp_path / "e.csv", rows)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "k_or_param,point,stderr,ci_low,ci_high,trials,censored,reference_value"
    assert lines[1].startswith("1,0.3,") and lines[2].endswith(",10,0,")
    cfg = {"b": 1, "a": [1, 2]}
    assert config_hash(cfg) == config_hash({"a": [1, 2], "b": 1})
    data = write_manifest(tmp_path / "m.json", cfg, 5, 1.5, outputs=["e.csv"])
    assert json.loads((tmp_path / "m.json").read_text()) == data
    assert data["seed"] == 5 and data["config_hash"] == config_hash(cfg)
