"""Batch command line front end.

Every command reads a JSON run configuration (``--config``); common flags
override the matching configuration keys.  Outputs go to ``--out`` together
with a ``manifest.json`` that holds the fully resolved configuration, so
passing a manifest back as ``--config`` reproduces the run exactly.

Exit codes: 0 ok, 2 configuration error, 3 every verdict undetermined,
4 a requested tolerance could not be met.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .criteria import CriterionParams, classify, theorem3_limit
from .errors import (DepthTooShallow, GWEmigError, StateSpaceTooLarge, TruncationTooTight)
from .exact import expected_tau_bounds, forward_dp_tau, perpetuity_bracket
from .laws import GenerationModel, gw_extinction_prob, make_law
from .mc import (SeedSpec, decomposition_independence_test, coupled_decomposition_runs,
                 estimate_W, grincevicius_experiment, pathwise_identity_violations,
                 proposition1_experiment, stream_id, theorem3_experiment, write_estimates_csv,
                 write_manifest)
from .process import ProcessConfig, simulate, write_trajectories_csv

EXIT_OK, EXIT_CONFIG, EXIT_UNDETERMINED, EXIT_TOLERANCE = 0, 2, 3, 4
TOLERANCE_ERRORS = (TruncationTooTight, DepthTooShallow, StateSpaceTooLarge)
EXPERIMENTS = ("theorem3", "grincevicius", "proposition1", "kesten-stigum", "decomposition")


class ConfigError(Exception):
    pass


def load_config(path) -> dict:
    """Read a run configuration or a manifest written by a previous run."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "config_hash" in data and "config" in data:
        cfg = dict(data["config"])
        cfg.setdefault("seed", data.get("seed"))
        return cfg
    return data


def _model(cfg: dict) -> GenerationModel:
    if "model" not in cfg:
        raise ConfigError("config has no 'model'")
    return GenerationModel.from_descriptor(cfg["model"])


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    for key in ("seed", "trials", "horizon", "tolerance"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg.setdefault("seed", 0)
    return cfg


def _require(cfg, key, kind=int):
    if key not in cfg or cfg[key] is None:
        raise ConfigError(f"config needs '{key}'")
    try:
        return kind(cfg[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for '{key}': {cfg[key]!r}") from exc


def _outdir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(out: Path, cfg: dict, t0: float, files, **extra):
    write_manifest(out / "manifest.json", cfg, cfg["seed"], time.time() - t0,
                   outputs=sorted(files), **extra)


# -- commands ------------------------------------------------------------------------


def cmd_classify(cfg, args) -> int:
    model = _model(cfg)
    params = CriterionParams(**cfg.get("criteria", {}))
    report = classify(model, int(cfg.get("k", 1)), params, int(cfg.get("n_max", 10)))
    text = report.to_json(indent=2)
    if args.out:
        out = _outdir(args)
        (out / "report.json").write_text(text + "\n")
    print(text)
    return EXIT_UNDETERMINED if report.all_undetermined() else EXIT_OK


def cmd_simulate(cfg, args) -> int:
    t0 = time.time()
    model = _model(cfg)
    config = ProcessConfig(model, _require(cfg, "k"), cfg.get("variant", "emigration"),
                           cfg.get("k0"))
    trials, horizon = _require(cfg, "trials"), _require(cfg, "horizon")
    seeds = SeedSpec(int(cfg["seed"]))
    sid = stream_id("simulate")

    def one(i):
        return simulate(config, horizon, seeds.rng(sid, i))

    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            trajs = list(pool.map(one, range(trials)))
    else:
        trajs = [one(i) for i in range(trials)]
    out = _outdir(args)
    write_trajectories_csv(out / "trajectories.csv", trajs)
    _finish(out, cfg, t0, ["trajectories.csv"])
    return EXIT_OK


def cmd_exact(cfg, args) -> int:
    t0 = time.time()
    model = _model(cfg)
    k, N = _require(cfg, "k"), _require(cfg, "N")
    tol = float(cfg.get("tolerance", 1e-9))
    M = cfg.get("truncation")
    out = _outdir(args)
    quantity = cfg.get("quantity", "tau-dist")
    if quantity == "tau-dist":
        res = forward_dp_tau(model, k, N, M, tol)
        (out / "dp.json").write_text(res.to_json() + "\n")
        # P[tau < 1] = 0 is not reported; the list starts at n = 2
        probs = res.probs[1:]
        print(json.dumps({"probs": probs, "error_bound": res.error_bound}))
        with open(out / "tau_dist.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "p_tau_lt_n", "p_tau_lt_n_upper"])
            for n, (lo, hi) in enumerate(zip(res.probs, res.probs_upper), start=1):
                w.writerow([n, repr(lo), repr(hi)])
        _finish(out, cfg, t0, ["dp.json", "tau_dist.csv"])
    elif quantity == "expected-tau":
        b = expected_tau_bounds(model, k, N, M, tol)
        body = {"lower": b.lower, "upper": b.upper, "infinite": b.infinite,
                "survival_at_N": b.survival_at_N, "method": b.method}
        (out / "expected_tau.json").write_text(json.dumps(body) + "\n")
        print(json.dumps(body))
        _finish(out, cfg, t0, ["expected_tau.json"])
    else:
        raise ConfigError(f"unknown exact quantity {quantity!r}")
    return EXIT_OK


def cmd_perpetuity(cfg, args) -> int:
    t0 = time.time()
    model = _model(cfg)
    if not model.offspring.is_constant:
        raise ConfigError("perpetuity needs a constant offspring law")
    lam = int(model.offspring.values[0])
    tol = cfg.get("tolerance")
    res = perpetuity_bracket(lam, model.emigration, _require(cfg, "k"), _require(cfg, "depth"),
                             None if tol is None else float(tol))
    body = {"lower": res.lower, "upper": res.upper, "width": res.width, "depth": res.depth}
    out = _outdir(args)
    (out / "perpetuity.json").write_text(json.dumps(body) + "\n")
    print(json.dumps(body))
    _finish(out, cfg, t0, ["perpetuity.json"])
    return EXIT_OK


def _trials_spec(cfg):
    if "trials_per_k" in cfg:
        factor = float(cfg["trials_per_k"])
        return lambda k: int(factor * k)
    return _require(cfg, "trials")


def cmd_experiment(name, cfg, args) -> int:
    t0 = time.time()
    out = _outdir(args)
    seed = int(cfg["seed"])
    th = args.threads
    if name == "theorem3":
        model = _model(cfg)
        N = cfg.get("N")
        N = math.inf if N in (None, "inf") else int(N)
        rows = theorem3_experiment(model, cfg["k_grid"], N, _trials_spec(cfg), seed, th,
                                   int(cfg.get("horizon", 60)))
        write_estimates_csv(out / "theorem3.csv", [(r.k, r.ratio, r.reference) for r in rows])
        _finish(out, cfg, t0, ["theorem3.csv"], reference_value=rows[0].reference)
    elif name == "grincevicius":
        y = make_law(cfg["y"]) if "y" in cfg else _model(cfg).emigration
        rows, bound = grincevicius_experiment(float(cfg["a"]), y, cfg["k_grid"],
                                              int(cfg.get("depth", 60)), _require(cfg, "trials"),
                                              seed, th)
        write_estimates_csv(out / "grincevicius.csv", [(r.k, r.ratio, r.reference) for r in rows])
        _finish(out, cfg, t0, ["grincevicius.csv"], reference_value=rows[0].reference,
                truncation_bound=bound)
    elif name == "proposition1":
        model = _model(cfg)
        rows, trend = proposition1_experiment(model, cfg["k_grid"], _require(cfg, "horizon"),
                                              _require(cfg, "trials"), seed, th)
        ref = None
        if model.emigration.is_constant and model.emigration.values[0] == 0:
            ref = gw_extinction_prob(model.offspring)
        write_estimates_csv(out / "proposition1.csv",
                            [(k, r, None if ref is None else ref ** k)
                             for k, r in zip(cfg["k_grid"], rows)])
        _finish(out, cfg, t0, ["proposition1.csv"], trend=trend)
    elif name == "kesten-stigum":
        model = _model(cfg)
        est = estimate_W(model, _require(cfg, "horizon"), _require(cfg, "trials"), seed, th,
                         float(cfg.get("eps", 0.01)), k=_require(cfg, "k"))
        write_estimates_csv(out / "kesten_stigum.csv",
                            [("P[W_n>eps]", est.p_w_above, None), ("P[Z_n>0]", est.p_alive, None)])
        with open(out / "w_samples.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "w_n", "w_half"])
            for i, (a, b) in enumerate(zip(est.w, est.w_half)):
                w.writerow([i, repr(float(a)), repr(float(b))])
        _finish(out, cfg, t0, ["kesten_stigum.csv", "w_samples.csv"], cauchy=est.cauchy)
    elif name == "decomposition":
        model = _model(cfg)
        k, k0, n_probe = _require(cfg, "k"), _require(cfg, "k0"), int(cfg.get("n_probe", 2))
        trials = _require(cfg, "trials")
        test = decomposition_independence_test(model, k, k0, n_probe, trials, seed, th)
        runs = coupled_decomposition_runs(model, k, k0, n_probe + 1, trials, seed, th)
        body = {"p_value": test.p_value, "statistic": test.statistic, "dof": test.dof,
                "verdict": test.verdict, "table": test.table,
                "pathwise_violations": pathwise_identity_violations(runs)}
        (out / "decomposition.json").write_text(json.dumps(body, indent=2) + "\n")
        _finish(out, cfg, t0, ["decomposition.json"])
    else:
        raise ConfigError(f"unknown experiment {name!r}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration or manifest (JSON)")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--out", help="output directory")
    common.add_argument("--trials", type=int)
    common.add_argument("--horizon", type=int)
    common.add_argument("--tolerance", type=float)

    p = argparse.ArgumentParser(prog="gwemig", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"gwemig {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("classify", "simulate", "exact", "perpetuity"):
        sub.add_parser(name, parents=[common])
    exp = sub.add_parser("experiment")
    exp_sub = exp.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        exp_sub.add_parser(name, parents=[common])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "classify":
            return cmd_classify(cfg, args)
        if args.command == "simulate":
            return cmd_simulate(cfg, args)
        if args.command == "exact":
            return cmd_exact(cfg, args)
        if args.command == "perpetuity":
            return cmd_perpetuity(cfg, args)
        return cmd_experiment(args.experiment, cfg, args)
    except TOLERANCE_ERRORS as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GWEmigError, KeyError, TypeError, ValueError) as exc:
        code = getattr(exc, "code", type(exc).__name__)
        print(f"config error [{code}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
