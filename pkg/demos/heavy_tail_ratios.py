"""Extinction probability against the emigration tail for heavy-tailed Y.

For regularly varying emigration, P[tau < inf | Z_0 = k] / P[Y > k]
settles at a constant depending only on the offspring mean and the tail
index.  Also shows the perpetuity tail for a = 1/2.
"""
from gwemig import GenerationModel, pareto, pmf
from gwemig.mc import grincevicius_experiment, monotone_approach, theorem3_experiment

model = GenerationModel(pmf({1: 1 / 3, 2: 1 / 3, 3: 1 / 3}), pareto(1.0))
rows = theorem3_experiment(model, [16, 32, 64, 128], trials=lambda k: 4000 * k, seeds=1)
for r in rows:
    print(f"k={int(r.k):4d}  ratio {r.ratio.point:.3f} +- {r.ratio.stderr:.3f}  (limit {r.reference:.3f})")
print("approaching the limit monotonically:",
      monotone_approach([r.ratio.point for r in rows], rows[0].reference))

prow, bound = grincevicius_experiment(0.5, pareto(1.0), [16, 64, 256], trials=400_000, seeds=2)
for r in prow:
    print(f"x={int(r.k):4d}  P[X > x]/P[Y > x] = {r.ratio.point:.3f} +- {r.ratio.stderr:.3f}  (limit {r.reference})")
print(f"truncation bound {bound:.1e}")
