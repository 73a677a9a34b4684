"""Extinction-time law of a small process, computed two ways.

The sandwich DP gives certified bounds on P[tau < n]; plain simulation
should land inside them up to sampling error.
"""
import math

from gwemig import GenerationModel, pmf
from gwemig.exact import forward_dp_tau, expected_tau_bounds
from gwemig.mc import estimate_qk

model = GenerationModel(pmf({0: 0.3, 2: 0.3, 4: 0.4}), pmf({0: 0.5, 1: 0.3, 3: 0.2}))
k = 2

dp = forward_dp_tau(model, k, 21)
print(f"truncation M={dp.M}, certified error {dp.error_bound:.2e}")

trials = 40_000
for n in (2, 5, 10, 20):
    est = estimate_qk(model, n - 1, trials, seeds=n, k=k)
    p = dp.probs[n - 1]
    z = (est.point - p) / max(est.stderr, 1e-12)
    print(f"P[tau < {n:2d}]  exact {p:.5f}  simulated {est.point:.5f} +- {est.stderr:.5f}  z={z:+.2f}")

tb = expected_tau_bounds(model, k, 200)
print("E[tau] bounds:", tb.lower, tb.upper, "(infinite)" if tb.infinite else "")
print(f"still alive after 200 generations: {tb.survival_at_N:.4f}")
