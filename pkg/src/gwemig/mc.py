"""Monte Carlo estimators with reproducible, worker-count independent seeding.

Trials are grouped into fixed blocks of :data:`BLOCK` trials.  Block ``b``
of stream ``s`` always draws from the generator seeded by
``SeedSequence(master_seed, spawn_key=(s, b))``, whatever worker runs it,
and block results are combined in block order.  Results therefore do not
depend on the number of threads.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .criteria import grincevicius_limit, theorem3_limit
from .errors import InvalidParam, OutOfScope
from .exact import sum_minus_emigration
from .laws import DiscreteLaw, GenerationModel, ParetoTail, STATE_CAP, log_plus_moment
from .process import ProcessConfig, _individual_draws, step_many

BLOCK = 4096
SURVIVAL_THRESHOLD = 10 ** 6


@dataclass(frozen=True)
class SeedSpec:
    """Master seed from which every block stream is derived."""

    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise InvalidParam("master seed must be an unsigned 64-bit integer")

    def rng(self, stream: int, block: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(stream), int(block)))
        return np.random.Generator(np.random.PCG64(ss))


def stream_id(label: str) -> int:
    """Stable integer tag for a named random stream."""
    return zlib.crc32(label.encode())


def as_seed(seeds) -> SeedSpec:
    return seeds if isinstance(seeds, SeedSpec) else SeedSpec(int(seeds))


def run_blocks(fn: Callable, trials: int, seeds, label: str, threads: int = 1) -> list:
    """Apply ``fn(rng, size)`` to consecutive blocks and return the results
    in block order."""
    if trials < 1:
        raise InvalidParam("trials must be positive")
    seeds = as_seed(seeds)
    sid = stream_id(label)
    sizes = [min(BLOCK, trials - b * BLOCK) for b in range(math.ceil(trials / BLOCK))]

    def work(b):
        return fn(seeds.rng(sid, b), sizes[b])

    if threads <= 1 or len(sizes) == 1:
        return [work(b) for b in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, range(len(sizes))))


# -- confidence intervals ------------------------------------------------------------


@dataclass
class EstimateCI:
    point: float
    stderr: float
    ci_low: float
    ci_high: float
    trials: int
    censored: int = 0
    events: Optional[int] = None

    def scaled(self, factor: float) -> "EstimateCI":
        return EstimateCI(self.point * factor, self.stderr * factor, self.ci_low * factor,
                          self.ci_high * factor, self.trials, self.censored, self.events)

    def contains(self, x: float) -> bool:
        return self.ci_low <= x <= self.ci_high


def frequency_ci(events: int, trials: int, censored: int = 0, level: float = 0.95) -> EstimateCI:
    """Normal-approximation interval for ``events / trials``.

    With fewer than 4 events the interval is ``[0, max(3 / trials, p + z se)]``
    (rule of three at zero events).
    """
    p = events / trials
    se = math.sqrt(p * (1 - p) / trials)
    z = float(stats.norm.ppf(0.5 + level / 2))
    lo, hi = max(p - z * se, 0.0), min(p + z * se, 1.0)
    if events < 4:
        lo, hi = 0.0, max(3.0 / trials, hi)
    return EstimateCI(p, se, lo, hi, trials, censored, events)


# -- extinction --------------------------------------------------------------------------


def _extinction_block(model, k, horizon, size, rng, stop_level=STATE_CAP):
    """Extinction times (0 = none by ``horizon``) and final states.

    Paths reaching ``stop_level`` are frozen there and count as survivors.
    """
    z = np.full(size, k, dtype=np.int64)
    tau = np.zeros(size, dtype=np.int64)
    for n in range(1, horizon + 1):
        idx = np.flatnonzero((z > 0) & (z < stop_level))
        if idx.size == 0:
            break
        new, _ = step_many(z[idx], model, rng)
        z[idx] = new
        tau[idx[new == 0]] = n
    return tau, z


def _model_k(config, k=None):
    if isinstance(config, ProcessConfig):
        return config.model, config.initial_k if k is None else k
    if k is None:
        raise InvalidParam("initial state k is required")
    return config, k


def extinction_times(config, horizon: int, trials: int, seeds, threads: int = 1,
                     k: Optional[int] = None, label: str = "extinction",
                     stop_level: int = STATE_CAP):
    model, k = _model_k(config, k)
    parts = run_blocks(lambda rng, n: _extinction_block(model, k, horizon, n, rng, stop_level),
                       trials, seeds, f"{label}:k={k}:h={horizon}", threads)
    tau = np.concatenate([p[0] for p in parts])
    z = np.concatenate([p[1] for p in parts])
    return tau, z


def estimate_qk(config, horizon: int, trials: int, seeds, threads: int = 1,
                survival_threshold: int = SURVIVAL_THRESHOLD, level: float = 0.95,
                k: Optional[int] = None) -> EstimateCI:
    """Frequency of extinction by ``horizon`` as an estimate of ``q_k``.

    Paths alive at the horizon count as survivors if their state is at
    least ``survival_threshold`` and as censored otherwise.
    """
    tau, z = extinction_times(config, horizon, trials, seeds, threads, k, "qk")
    events = int(np.count_nonzero(tau > 0))
    censored = int(np.count_nonzero((tau == 0) & (z < survival_threshold)))
    return frequency_ci(events, trials, censored, level)


@dataclass
class TauPmf:
    pmf: dict
    counts: dict
    censored: int
    survived: int
    trials: int

    @property
    def censored_mass(self) -> float:
        return self.censored / self.trials


def estimate_tau_pmf(config, horizon: int, trials: int, seeds, threads: int = 1,
                     survival_threshold: int = SURVIVAL_THRESHOLD,
                     k: Optional[int] = None) -> TauPmf:
    """Empirical ``P[tau = n]`` for ``n <= horizon``; nothing is imputed
    beyond the horizon."""
    tau, z = extinction_times(config, horizon, trials, seeds, threads, k, "taupmf")
    vals, cnt = np.unique(tau[tau > 0], return_counts=True)
    counts = {int(v): int(c) for v, c in zip(vals, cnt)}
    alive = tau == 0
    survived = int(np.count_nonzero(alive & (z >= survival_threshold)))
    censored = int(np.count_nonzero(alive)) - survived
    return TauPmf({n: c / trials for n, c in counts.items()}, counts, censored, survived, trials)


def _renewal_block(model, k, horizon, n_returns, size, rng):
    z = np.full(size, k, dtype=np.int64)
    start = np.zeros(size, dtype=np.int64)
    got = np.zeros(size, dtype=np.int64)
    out = np.full((size, n_returns), -1, dtype=np.int64)
    for n in range(1, horizon + 1):
        restart = (z == 0) & (got < n_returns)
        z[restart] = k
        start[restart] = n  # the chain sits at k from generation n on
        idx = np.flatnonzero((z > 0) & (z < STATE_CAP) & (got < n_returns) & ~restart)
        if idx.size == 0 and not restart.any():
            break
        if idx.size:
            new, _ = step_many(z[idx], model, rng)
            z[idx] = new
            hit = idx[new == 0]
            out[hit, got[hit]] = n - start[hit]
            got[hit] += 1
    return out


def renewal_excursions(config, horizon: int, trials: int, seeds, n_returns: int = 2,
                       threads: int = 1, k: Optional[int] = None) -> np.ndarray:
    """Lengths of the first ``n_returns`` excursions of the renewal chain.

    An excursion runs from the restart state ``k`` to the next visit of 0,
    so all excursions share the law of ``tau``.  Column ``j`` holds the
    ``j``-th excursion; ``-1`` marks excursions not completed by ``horizon``.
    """
    model, k = _model_k(config, k)
    parts = run_blocks(lambda rng, n: _renewal_block(model, k, horizon, n_returns, n, rng),
                       trials, seeds, f"renewal:k={k}:h={horizon}", threads)
    return np.concatenate(parts)


# -- martingale limit ------------------------------------------------------------------


def _w_block(model, k, n_terminal, size, rng):
    half = n_terminal // 2
    z = np.full(size, k, dtype=np.int64)
    z_half = z.copy()
    sat_any = np.zeros(size, dtype=bool)
    for n in range(1, n_terminal + 1):
        idx = np.flatnonzero((z > 0) & (z < STATE_CAP))
        if idx.size:
            new, sat = step_many(z[idx], model, rng)
            z[idx] = new
        if n == half:
            z_half = z.copy()
    sat_any = z >= STATE_CAP
    return z, z_half, sat_any


@dataclass
class WEstimate:
    n_terminal: int
    w: np.ndarray
    w_half: np.ndarray
    survived: np.ndarray
    saturated: int
    eps: float
    p_w_above: EstimateCI
    p_alive: EstimateCI
    cauchy: dict = field(default_factory=dict)

    def occupancy(self, a: float, b: float) -> int:
        return int(np.count_nonzero((self.w > a) & (self.w < b)))


def estimate_W(config, n_terminal: int, trials: int, seeds, threads: int = 1, eps: float = 0.01,
               k: Optional[int] = None) -> WEstimate:
    """Samples of ``W_n = lam^-n Z_n`` at ``n_terminal`` together with
    ``P[W_n > eps]``, ``P[Z_n > 0]`` and the Cauchy diagnostic
    ``|W_n - W_{n/2}|``."""
    model, k = _model_k(config, k)
    parts = run_blocks(lambda rng, n: _w_block(model, k, n_terminal, n, rng),
                       trials, seeds, f"W:k={k}:n={n_terminal}", threads)
    z = np.concatenate([p[0] for p in parts])
    zh = np.concatenate([p[1] for p in parts])
    sat = int(np.concatenate([p[2] for p in parts]).sum())
    lam = model.lam
    w = z / lam ** n_terminal
    wh = zh / lam ** (n_terminal // 2)
    diff = np.abs(w - wh)
    alive = z > 0
    cauchy = {"mean_abs_diff": float(diff.mean()),
              "q99_abs_diff": float(np.quantile(diff, 0.99)),
              "mean_abs_diff_alive": float(diff[alive].mean()) if alive.any() else 0.0}
    return WEstimate(n_terminal, w, wh, alive, sat, eps,
                     frequency_ci(int(np.count_nonzero(w > eps)), trials),
                     frequency_ci(int(np.count_nonzero(alive)), trials), cauchy)


def dyadic_intervals(low: float, high: float, finest: int):
    """Dyadic intervals ``(j 2^-m, (j+1) 2^-m)`` inside ``(low, high)`` for
    every width ``2^-m`` from ``high - low`` down to ``2^-finest``."""
    out = []
    m = -int(math.floor(math.log2(high - low)))
    while m <= finest:
        w = 2.0 ** (-m)
        j = math.ceil(low / w)
        while (j + 1) * w <= high:
            out.append((j * w, (j + 1) * w))
            j += 1
        m += 1
    return out


# -- theorem verification experiments ------------------------------------------------


@dataclass
class RatioRow:
    """Estimate of a probability and of its ratio to a reference tail."""

    k: float
    probability: EstimateCI
    tail: float
    ratio: EstimateCI
    reference: float


def _trials_for(trials, k):
    if callable(trials):
        return int(trials(k))
    if isinstance(trials, dict):
        return int(trials[k])
    return int(trials)


def _pareto_alpha(law: DiscreteLaw) -> float:
    if not isinstance(law.tail, ParetoTail):
        raise OutOfScope("emigration law needs a regularly varying (pareto) tail")
    return law.tail.alpha


def theorem3_experiment(model: GenerationModel, k_grid: Sequence[int], N=math.inf,
                        trials=10 ** 5, seeds=0, threads: int = 1,
                        horizon: int = 60, stop_level: int = 10 ** 9) -> list:
    """Ratios ``P[tau < N | Z_0 = k] / P[Y > k]`` over ``k_grid``.

    ``N = inf`` is approximated by extinction before ``horizon``.  Paths
    reaching ``stop_level`` are counted as survivors; their remaining
    extinction chance is of order ``P[Y > stop_level]``.  ``trials`` may be
    an integer, a dict keyed by ``k`` or a function of ``k``.
    """
    alpha = _pareto_alpha(model.emigration)
    ref = theorem3_limit(model.lam, alpha, N)
    h = horizon if math.isinf(N) else int(N) - 1
    rows = []
    for k in k_grid:
        n = _trials_for(trials, k)
        tau, _ = extinction_times(model, h, n, seeds, threads, k, "theorem3", stop_level)
        est = frequency_ci(int(np.count_nonzero(tau > 0)), n)
        t = float(model.emigration.tail_fn(k))
        rows.append(RatioRow(k, est, t, est.scaled(1.0 / t), ref))
    return rows


def one_step_extinction(model: GenerationModel, k: int):
    """Bounds on ``P[tau < 2 | Z_0 = k] = P[xi_1 + ... + xi_k <= Y]``."""
    out = []
    for optimistic in (True, False):
        pm, vmin, kill, _ = sum_minus_emigration(model, k, optimistic)
        vals = vmin + np.arange(len(pm))
        out.append(float(pm[vals <= 0].sum() + kill))
    return out[0], out[1]


def perpetuity_tail_bound(a: float, law: DiscreteLaw, depth: int, x: float) -> float:
    """Bound on ``P[sum_{n>=depth} a^n Y_{n+1} > x]`` for a pareto tail.

    With ``b = sqrt(a)``, the event forces ``a^n Y > x (1-b) b^(n-depth)``
    for some ``n >= depth``; a union bound then gives a geometric series.
    """
    if a == 0:
        return 0.0
    alpha = _pareto_alpha(law)
    b = math.sqrt(a)
    total = 0.0
    for j in range(10_000):
        n = depth + j
        term = float(law.tail_fn(x * (1 - b) * b ** j / a ** n)) if a ** n > 0 else 0.0
        total += term
        if j > 10 and term < 1e-18 * max(total, 1e-300):
            break
    return min(total, 1.0)


def _perpetuity_block(a, law, depth, k_grid, size, rng):
    y = law.sample(rng, (size, depth)).astype(float)
    x = y @ (a ** np.arange(depth)) if a > 0 else y[:, 0]
    return np.array([np.count_nonzero(x > k) for k in k_grid])


def grincevicius_experiment(a: float, y_law: DiscreteLaw, k_grid: Sequence[int],
                            depth: int = 60, trials: int = 10 ** 5, seeds=0,
                            threads: int = 1, slack: float = 1e-9):
    """Ratios ``P[X > k] / P[Y > k]`` for the perpetuity ``X = sum a^n Y_{n+1}``.

    ``X`` is truncated after ``depth`` terms; the returned
    ``truncation_bound`` bounds the probability that the neglected terms
    exceed ``slack``.
    """
    if not 0 <= a < 1:
        raise InvalidParam("a must lie in [0, 1)")
    alpha = _pareto_alpha(y_law)
    ea = a ** alpha if a > 0 else 0.0
    ref = grincevicius_limit(ea)
    parts = run_blocks(lambda rng, n: _perpetuity_block(a, y_law, depth, list(k_grid), n, rng),
                       trials, seeds, f"perpetuity:a={a!r}:d={depth}", threads)
    counts = np.sum(parts, axis=0)
    rows = []
    for k, c in zip(k_grid, counts):
        est = frequency_ci(int(c), trials)
        t = float(y_law.tail_fn(k))
        rows.append(RatioRow(k, est, t, est.scaled(1.0 / t), ref))
    return rows, perpetuity_tail_bound(a, y_law, depth, slack)


def proposition1_experiment(config, k_grid: Sequence[int], horizon: int, trials: int,
                            seeds, threads: int = 1,
                            survival_threshold: int = SURVIVAL_THRESHOLD):
    """``q_k`` estimates over ``k_grid`` and a monotone-trend statistic."""
    model = config.model if isinstance(config, ProcessConfig) else config
    if math.isinf(log_plus_moment(model.emigration)):
        raise OutOfScope("needs E[log_+ Y] < inf")
    rows = [estimate_qk(model, horizon, trials, seeds, threads, survival_threshold, k=k)
            for k in k_grid]
    pts = [r.point for r in rows]
    kt = stats.kendalltau(list(k_grid), pts) if len(set(pts)) > 1 else None
    trend = {"decreasing_steps": sum(b <= a for a, b in zip(pts, pts[1:])),
             "steps": len(pts) - 1,
             "kendall_tau": float(kt.statistic) if kt is not None else 0.0}
    return rows, trend


def monotone_approach(estimates: Sequence[float], target: float) -> bool:
    """True when ``|estimate - target|`` is nonincreasing along the grid."""
    d = [abs(e - target) for e in estimates]
    return all(b <= a for a, b in zip(d, d[1:]))


# -- decomposition ----------------------------------------------------------------------


def _decomposition_block(model, k, k0, n_probe, size, rng, max_rounds=10_000):
    """Vectorised coupled runs; returns ``z, z1, z2`` at generations 1..n_probe."""
    off = model.offspring
    first = np.zeros(0, dtype=np.int64)
    rounds = 0
    while first.size < size:
        rounds += 1
        if rounds > max_rounds:
            raise InvalidParam(f"P[Z_1 = {k0}] too small for rejection sampling")
        m = 4 * (size - first.size)
        # generation 1 of Z from k individuals, coupled with Y as configured
        if model.coupling == "comonotone":
            u = rng.random(m)
            y = model.emigration.quantile(u)
            d = off.quantile(u) + (off.sample(rng, (m, k - 1)).sum(axis=1) if k > 1 else 0)
        else:
            y = model.emigration.sample(rng, m)
            d = off.sample(rng, (m, k)).sum(axis=1)
        z1st = np.maximum(d - y, 0)
        first = np.concatenate([first, np.flatnonzero(z1st == k0)])[:size]
    z = np.full(size, k0, dtype=np.int64)
    a1 = np.full(size, k, dtype=np.int64)
    a2 = np.full(size, k0 - k, dtype=np.int64)
    out = np.zeros((3, size, n_probe), dtype=np.int64)
    out[:, :, 0] = [z, a1, a2]
    for n in range(1, n_probe):
        need = np.maximum(z, a1 + a2)
        total = int(need.sum())
        if total > 50_000_000:
            raise InvalidParam("populations too large for individual coupling")
        draws = np.asarray(off.sample(rng, total), dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(need)[:-1]])
        if model.coupling == "comonotone":
            u = rng.random(size)
            y = model.emigration.quantile(u)
            has = need > 0
            draws[starts[has]] = off.quantile(u[has])
        else:
            y = model.emigration.sample(rng, size)
        cs = np.concatenate([[0], np.cumsum(draws)])
        base = cs[starts]
        s_z = cs[starts + z] - base
        s_1 = cs[starts + a1] - base
        s_12 = cs[starts + a1 + a2] - base
        z = np.where(z > 0, np.maximum(s_z - y, 0), 0)
        a2 = s_12 - s_1
        a1 = np.where(a1 > 0, np.maximum(s_1 - y, 0), 0)
        out[:, :, n] = [z, a1, a2]
    return out


def coupled_decomposition_runs(model: GenerationModel, k: int, k0: int, n_probe: int,
                               trials: int, seeds, threads: int = 1) -> np.ndarray:
    """Array of shape ``(3, trials, n_probe)`` holding ``Z, Z1, Z2`` at
    generations ``1..n_probe`` on the event ``Z_1 = k0``."""
    if k0 <= k:
        raise InvalidParam("k0 must exceed k")
    parts = run_blocks(lambda rng, n: _decomposition_block(model, k, k0, n_probe, n, rng),
                       trials, seeds, f"decomp:k={k}:k0={k0}:n={n_probe}", threads)
    return np.concatenate(parts, axis=1)


def pathwise_identity_violations(runs: np.ndarray) -> int:
    """Count trials and generations with ``Z1 > 0`` where ``Z != Z1 + Z2``."""
    z, z1, z2 = runs
    on = z1 > 0
    return int(np.count_nonzero(on & (z != z1 + z2)))


def _quantile_bins(x, n_bins):
    edges = np.unique(np.quantile(x, np.linspace(0, 1, n_bins + 1)[1:-1], method="lower"))
    return np.searchsorted(edges, x, side="right")


@dataclass
class IndependenceTest:
    p_value: float
    statistic: float
    dof: int
    table: list
    verdict: str


def independence_chi2(x, y, max_bins: int = 6) -> IndependenceTest:
    """Chi-square test on quantile-binned ``(x, y)`` with every expected
    cell count at least 5."""
    for nb in range(max_bins, 1, -1):
        bx, by = _quantile_bins(x, nb), _quantile_bins(y, nb)
        tab = np.zeros((bx.max() + 1, by.max() + 1), dtype=np.int64)
        np.add.at(tab, (bx, by), 1)
        tab = tab[tab.sum(axis=1) > 0][:, tab.sum(axis=0) > 0]
        if min(tab.shape) < 2:
            continue
        exp = np.outer(tab.sum(axis=1), tab.sum(axis=0)) / tab.sum()
        if exp.min() >= 5:
            res = stats.chi2_contingency(tab, correction=False)
            return IndependenceTest(float(res.pvalue), float(res.statistic), int(res.dof),
                                    tab.tolist(), "independent" if res.pvalue > 1e-3 else "dependent")
    return IndependenceTest(float("nan"), float("nan"), 0, [], "inconclusive")


def decomposition_independence_test(model: GenerationModel, k: int, k0: int, n_probe: int,
                                    trials: int, seeds, threads: int = 1) -> IndependenceTest:
    """Chi-square independence test of ``(Z1, Z2)`` at generation ``n_probe``
    (counted from the first generation, where the pair starts)."""
    runs = coupled_decomposition_runs(model, k, k0, n_probe + 1, trials, seeds, threads)
    return independence_chi2(runs[1, :, n_probe], runs[2, :, n_probe])


# -- output ---------------------------------------------------------------------------

ESTIMATE_COLUMNS = ["k_or_param", "point", "stderr", "ci_low", "ci_high", "trials",
                    "censored", "reference_value"]


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_estimates_csv(path, rows: Sequence[tuple]):
    """``rows`` are ``(k_or_param, EstimateCI, reference_value)`` triples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATE_COLUMNS)
        for key, est, ref in rows:
            w.writerow([_fmt(key), _fmt(est.point), _fmt(est.stderr), _fmt(est.ci_low),
                        _fmt(est.ci_high), est.trials, est.censored,
                        "" if ref is None else _fmt(ref)])


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(path, config: dict, seed: int, wall_time: float, **extra):
    data = {"config": config, "config_hash": config_hash(config), "seed": int(seed),
            "wall_time": wall_time, "tool_version": __version__,
            "numpy_version": np.__version__}
    data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return data
