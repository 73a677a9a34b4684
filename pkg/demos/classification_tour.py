"""Run the analytic classifier over a handful of models and print verdicts."""
import json
import math

from gwemig import GenerationModel, const, example1, pareto, pmf
from gwemig.criteria import classify

models = {
    "two-point offspring, unit emigration": GenerationModel(pmf({0: 0.5, 3: 0.5}), const(1)),
    "doubling, no emigration": GenerationModel(const(2), const(0)),
    "doubling, pareto(1) emigration": GenerationModel(const(2), pareto(1.0)),
    "doubling, log-scale atoms c=2": GenerationModel(const(2), example1(2.0, 2)),
    "coin offspring, boundary atoms": GenerationModel(pmf({1: 0.5, 3: 0.5}), example1(math.log(2), 1)),
}

for name, m in models.items():
    rep = classify(m, k=1).to_dict()
    short = {key: v["verdict"] for key, v in rep.items()}
    print(f"{name:40s} {json.dumps(short)}")
