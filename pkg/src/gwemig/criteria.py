"""Analytic classification of a branching process with emigration.

Every verdict is a :class:`Verdict` carrying the numbers it was derived
from, so a report can be re-checked without re-running anything.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import InvalidParam, OutOfRange, ZeroFactor
from .exact import sum_minus_emigration
from .laws import DiscreteLaw, Example1Tail, GenerationModel, ParetoTail, log_plus_moment, power_moment_finite

GRID = tuple(2.0 ** (-i) for i in range(21))
BOUNDARY_TOL = 1e-12


@dataclass
class CriterionParams:
    """Free parameters of the series conditions.

    ``r`` scales the emigration thresholds, ``epsilon`` the growth excess in
    the positive-recurrence series, ``theta`` the polynomial damping in the
    null-recurrence series and ``b`` the threshold scale in the
    deterministic-offspring criterion.
    """

    r: float = 1.0
    epsilon: float = 0.5
    theta: float = 1.5
    b: float = 1.0
    max_terms: int = 10 ** 6

    def __post_init__(self):
        for name in ("r", "epsilon", "b"):
            if not getattr(self, name) > 0:
                raise InvalidParam(f"{name} must be positive")
        if not self.theta > 1:
            raise InvalidParam("theta must exceed 1")
        if self.max_terms < 1:
            raise InvalidParam("max_terms must be positive")


@dataclass
class Verdict:
    verdict: str
    evidence: dict = field(default_factory=dict)
    method: str = ""

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "evidence": _jsonable(self.evidence),
                "method": self.method}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclass
class ClassificationReport:
    h1: Verdict
    h2: Verdict
    recurrent: Verdict
    expected_lifetime: Verdict
    zerner: Verdict

    def verdicts(self) -> dict:
        return {"h1": self.h1, "h2": self.h2, "recurrent": self.recurrent,
                "expected_lifetime": self.expected_lifetime, "zerner": self.zerner}

    def all_undetermined(self) -> bool:
        return all(v.verdict == "undetermined" for v in self.verdicts().values())

    def to_dict(self) -> dict:
        return {k: v.to_dict() for k, v in self.verdicts().items()}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


# -- hypotheses -------------------------------------------------------------------


def _bounds_at_least(model, n, level):
    """Lower and upper bounds on ``P[S_n - Y >= level]``."""
    out = []
    for optimistic in (False, True):
        pm, vmin, _, explode = sum_minus_emigration(model, n, optimistic)
        vals = vmin + np.arange(len(pm))
        out.append(float(pm[vals >= level].sum() + explode))
    return min(out[0], 1.0), min(out[1], 1.0)


def _bounds_at_most(model, n, level):
    """Lower and upper bounds on ``P[S_n - Y <= level]``."""
    out = []
    for optimistic in (True, False):
        pm, vmin, kill, _ = sum_minus_emigration(model, n, optimistic)
        vals = vmin + np.arange(len(pm))
        out.append(float(pm[vals <= level].sum() + kill))
    return min(out[0], 1.0), min(out[1], 1.0)


def _positivity(lo, hi):
    if lo > 0:
        return "holds"
    if hi == 0:
        return "fails"
    return "undetermined"


def check_h1(model: GenerationModel, k: int) -> Verdict:
    """Can a population of ``k`` grow in one generation?

    Evaluates ``P[xi_1 + ... + xi_k - Y >= k + 1]`` by convolution.
    """
    if k < 1:
        raise InvalidParam("k must be positive")
    lo, hi = _bounds_at_least(model, k, k + 1)
    ev = {"k": k, "probability": lo if lo == hi else None, "lower": lo, "upper": hi}
    return Verdict(_positivity(lo, hi), ev, "convolution")


def _h2_all_n(model: GenerationModel):
    """Decide the second hypothesis for every ``n`` from the supports alone.

    Returns ``(answer, reason)`` with ``answer`` in {True, False, None}.
    """
    off, emi = model.offspring, model.emigration
    if off.prob_zero() > 0:
        return True, "P[xi = 0] > 0"
    if emi.tail is not None and model.coupling == "independent":
        return True, "Y unbounded and independent of the offspring"
    if off.tail is not None or emi.tail is not None:
        return None, "heavy tail under comonotone coupling"
    # finite supports: the smallest value of S_n - Y is d_min + (n - 1) xi_min
    pm, vmin, kill, _ = sum_minus_emigration(model, 1, True)
    d_min = vmin + int(np.flatnonzero(pm > 0)[0])
    xi_min = off.min_value
    ok = d_min <= 0 and xi_min <= 1
    return ok, f"support analysis: min(xi_1 - Y) = {d_min}, min xi = {xi_min}"


def check_h2(model: GenerationModel, n_max: int = 10) -> Verdict:
    """Can a population of ``n`` shrink in one generation, for every ``n``?

    Evaluates ``P[xi_1 + ... + xi_n - Y <= n - 1]`` for ``n = 1..n_max`` and
    adds a verdict for all ``n`` from a support analysis when possible.
    """
    probs, verdicts = [], []
    for n in range(1, n_max + 1):
        lo, hi = _bounds_at_most(model, n, n - 1)
        probs.append(lo if lo == hi else [lo, hi])
        verdicts.append(_positivity(lo, hi))
    all_n, reason = _h2_all_n(model)
    ev = {"n_max": n_max, "probabilities": probs, "all_n": all_n, "all_n_reason": reason}
    if "fails" in verdicts or all_n is False:
        v = "fails"
    elif all_n is True:
        v = "holds"
    elif all(x == "holds" for x in verdicts):
        v = "holds"
        ev["checked_up_to"] = n_max
    else:
        v = "undetermined"
    return Verdict(v, ev, "convolution")


# -- recurrence ----------------------------------------------------------------------


def classify_recurrence(model: GenerationModel) -> Verdict:
    """Recurrent exactly when ``E[log_+ Y]`` is infinite."""
    m = log_plus_moment(model.emigration)
    v = "recurrent" if math.isinf(m) else "transient"
    return Verdict(v, {"log_plus_moment_Y": m}, "log moment of emigration")


# -- series conditions -----------------------------------------------------------------


@dataclass(frozen=True)
class Growth:
    """Threshold sequence ``g(m) = r * base**m * m**(-theta)``."""

    base: float
    theta: float = 0.0

    @classmethod
    def geometric(cls, base):
        return cls(float(base), 0.0)

    @classmethod
    def geometric_poly(cls, base, theta):
        return cls(float(base), float(theta))

    def log_threshold(self, m, r):
        m = np.asarray(m, dtype=float)
        return math.log(r) + m * math.log(self.base) - self.theta * np.log(m)


TailLike = Union[DiscreteLaw, Callable[[float], float]]


def _log_factors(tail: TailLike, growth: Growth, r: float, m):
    """``log P[Y <= g(m)]`` for an array of ``m``."""
    s = growth.log_threshold(m, r)
    if isinstance(tail, DiscreteLaw):
        t = np.asarray(tail.tail_at_log(s), dtype=float)
    else:
        t = np.array([tail(math.exp(x)) if x < 700 else 0.0 for x in np.atleast_1d(s)])
    with np.errstate(divide="ignore"):
        return np.log1p(-np.clip(t, 0.0, 1.0))


def partial_sum_diagnostic(tail: TailLike, growth: Growth, r: float = 1.0,
                           n_terms: int = 10 ** 6) -> dict:
    """Partial sums of ``sum_n prod_{m<=n} P[Y <= g(m)]`` over decades.

    The increments over successive decades ``(10^(d-1), 10^d]`` shrink
    geometrically for a summable series and stay comparable for a
    divergent one; ``trend`` is ``"growing"`` when the last increment is at
    least half the previous one and ``"bounded"`` otherwise.
    """
    m = np.arange(1, n_terms + 1)
    logs = np.cumsum(_log_factors(tail, growth, r, m))
    terms = np.exp(logs)
    partial = np.cumsum(terms)
    ends = [10 ** d for d in range(1, int(math.log10(n_terms)) + 1) if 10 ** d <= n_terms]
    sums = [float(partial[e - 1]) for e in ends]
    incs = [sums[0]] + [b - a for a, b in zip(sums, sums[1:])]
    ratio = incs[-1] / incs[-2] if len(incs) >= 2 and incs[-2] > 0 else 0.0
    return {"n_terms": n_terms, "decades": ends, "partial_sums": sums,
            "increments": incs, "last_ratio": ratio,
            "trend": "growing" if ratio >= 0.5 else "bounded"}


def series_criterion(tail: TailLike, growth: Growth, params: CriterionParams = None,
                     r: Optional[float] = None) -> Verdict:
    """Decide convergence of ``sum_{n>=1} prod_{m=1..n} P[Y <= g(m)]``.

    ``tail`` is either a :class:`DiscreteLaw` (whose tail family is used for
    an analytic decision) or a bare function ``t -> P[Y > t]``, which only
    gets a partial-sum fallback.

    Raises
    ------
    ZeroFactor
        If the first factor vanishes, so that the series is identically 0.
    """
    params = params or CriterionParams()
    r = params.r if r is None else r
    head = min(params.max_terms, 64)
    lf = _log_factors(tail, growth, r, np.arange(1, head + 1))
    if np.isneginf(lf[0]):
        raise ZeroFactor(f"P[Y <= g(1)] = 0 at r={r}; the series vanishes")
    ev = {"r": r, "base": growth.base, "theta": growth.theta}
    if np.isneginf(lf).any():
        ev["first_zero_factor"] = int(np.flatnonzero(np.isneginf(lf))[0]) + 1
        return Verdict("converges", ev, "finitely many nonzero terms")
    if not isinstance(tail, DiscreteLaw):
        diag = partial_sum_diagnostic(tail, growth, r, params.max_terms)
        ev["partial_sums"] = diag
        return Verdict("undetermined", ev, "partial sums")
    fam = tail.tail
    if fam is None:
        ev["max_value"] = tail.max_value
        return Verdict("diverges", ev, "factors reach 1")
    if isinstance(fam, ParetoTail):
        # sum of the tails is finite, so the product has a positive limit
        ev["alpha"] = fam.alpha
        return Verdict("diverges", ev, "product of factors has a positive limit")
    if isinstance(fam, Example1Tail):
        return _example1_verdict(tail, fam, growth, r, ev)
    diag = partial_sum_diagnostic(tail, growth, r, params.max_terms)
    ev["partial_sums"] = diag
    return Verdict("undetermined", ev, "partial sums")


def _example1_verdict(law, fam, growth, r, ev):
    """Raabe's test, refined at the boundary by Bertrand's logarithmic test.

    Here ``1 - a_{n+1}/a_n = P[Y > g(n+1)] ~ c / log g(n+1)`` and
    ``log g(n) = n log(base) - theta log n + log r``.
    """
    raabe = fam.c / math.log(growth.base)
    probe = np.array([10.0 ** d for d in range(2, 7)])
    t_next = law.tail_at_log(growth.log_threshold(probe + 1, r))
    ev.update({"c": fam.c, "raabe_limit": raabe,
               "raabe_terms": {int(n): float(n * t) for n, t in zip(probe, t_next)}})
    if raabe > 1 + BOUNDARY_TOL:
        return Verdict("converges", ev, "Raabe test")
    if raabe < 1 - BOUNDARY_TOL:
        return Verdict("diverges", ev, "Raabe test")
    # n(1 - ratio) - 1 = O(log(n)^... / n), hence log(n) * (...) -> 0 < 1
    ev["bertrand_limit"] = 0.0
    ev["bertrand_terms"] = {int(n): float(math.log(n) * (n * t - 1)) for n, t in zip(probe, t_next)}
    return Verdict("diverges", ev, "Gauss-Bertrand test")


def _first_positive_r(tail, growth, r0, tries=64):
    r = r0
    for _ in range(tries):
        if not np.isneginf(_log_factors(tail, growth, r, np.array([1]))[0]):
            return r
        r *= 2.0
    return None


def classify_lifetime(model: GenerationModel, params: CriterionParams = None) -> Verdict:
    """Finite or infinite expected lifetime for a recurrent model.

    Finite when the geometric series condition converges for some tested
    ``epsilon``; infinite when the damped series diverges and the moment and
    independence side conditions hold; undetermined otherwise (including
    for transient models, where the precondition fails).
    """
    params = params or CriterionParams()
    rec = classify_recurrence(model)
    if rec.verdict != "recurrent":
        return Verdict("undetermined", {"reason": "model is transient", **rec.evidence},
                       "precondition")
    lam = model.lam
    Y = model.emigration
    tried = []
    for eps in GRID:
        g = Growth.geometric(lam + eps)
        r = _first_positive_r(Y, g, params.r)
        if r is None:
            continue
        v = series_criterion(Y, g, params, r=r)
        tried.append({"epsilon": eps, "r": r, "verdict": v.verdict})
        if v.verdict == "converges":
            return Verdict("finite", {"epsilon": eps, "r": r, "series": v.evidence,
                                      "log_plus_moment_Y": rec.evidence["log_plus_moment_Y"]},
                           f"positive-recurrence series ({v.method})")
    ev = {"positive_recurrence_tries": tried}
    g = Growth.geometric_poly(lam, params.theta)
    r = _first_positive_r(Y, g, params.r)
    if r is None:
        return Verdict("undetermined", {**ev, "reason": "no threshold scale with a positive factor"},
                       "series conditions")
    v = series_criterion(Y, g, params, r=r)
    ev.update({"theta": params.theta, "r": r, "series": v.evidence})
    delta = next((d for d in GRID if power_moment_finite(model.offspring, 1 + d)), None)
    ev["delta"] = delta
    ev["independent"] = model.coupling == "independent"
    if v.verdict == "diverges" and delta is not None and ev["independent"]:
        return Verdict("infinite", ev, f"null-recurrence series ({v.method})")
    ev["reason"] = "neither series condition certified"
    return Verdict("undetermined", ev, "series conditions")


def zerner(model: GenerationModel, params: CriterionParams = None) -> Verdict:
    """Expected lifetime for constant offspring via Zerner's recurrence test.

    ``E[tau]`` is infinite iff ``sum_n prod_{m<=n} P[Y <= b lam^m]``
    diverges for some ``b``.
    """
    params = params or CriterionParams()
    if not model.offspring.is_constant:
        return Verdict("undetermined", {"reason": "offspring law is not constant"},
                       "not applicable")
    g = Growth.geometric(model.lam)
    b = _first_positive_r(model.emigration, g, params.b)
    if b is None:
        return Verdict("undetermined", {"reason": "no threshold scale with a positive factor"},
                       "series")
    v = series_criterion(model.emigration, g, params, r=b)
    ev = {"b": b, "series": v.evidence}
    if v.verdict == "diverges":
        return Verdict("E_tau_infinite", ev, v.method)
    if v.verdict == "converges":
        # convergence for every b follows for the analytic families because
        # the decision does not depend on the scale
        return Verdict("E_tau_finite", ev, v.method)
    return Verdict("undetermined", ev, v.method)


def classify(model: GenerationModel, k: int = 1, params: CriterionParams = None,
             n_max: int = 10) -> ClassificationReport:
    """Full analytic report for ``model`` started from ``k`` individuals."""
    params = params or CriterionParams()
    rec = classify_recurrence(model)
    if rec.verdict == "transient":
        life = Verdict("infinite", {"reason": "tau = inf with positive probability",
                                    **rec.evidence}, "transient")
    else:
        life = classify_lifetime(model, params)
    return ClassificationReport(check_h1(model, k), check_h2(model, n_max), rec, life,
                                zerner(model, params))


# -- closed forms -------------------------------------------------------------------


def theorem3_limit(lam: float, alpha: float, N=math.inf) -> float:
    """``sum_{l=1}^{N-1} lam^(-alpha l)``, the large-``k`` ratio of
    ``P[tau < N | Z_0 = k]`` to ``P[Y > k]``."""
    if not lam > 1 or not alpha > 0:
        raise InvalidParam("need lam > 1 and alpha > 0")
    q = lam ** (-alpha)
    if math.isinf(N):
        return q / (1.0 - q)
    N = int(N)
    if N < 2:
        raise InvalidParam("N must be at least 2")
    return q * (1.0 - q ** (N - 1)) / (1.0 - q)


def grincevicius_limit(ea: float) -> float:
    """``sum_j ea**j = 1 / (1 - ea)`` for ``ea = E[A^alpha] < 1``."""
    if not 0 <= ea < 1:
        raise OutOfRange(f"E[A^alpha] = {ea} must lie in [0, 1)")
    return 1.0 / (1.0 - ea)


def vbe_tail_bound(c_moment: float, delta: float, n: int, t: float) -> float:
    """von Bahr-Esseen type bound ``min(1, 2 c n t^(-1-delta))`` on
    ``P[|S_n| > t]`` for centred sums with ``E|X|^(1+delta) <= c``."""
    if not (c_moment > 0 and 0 < delta <= 1 and n >= 1 and t > 0):
        raise InvalidParam("need c > 0, delta in (0, 1], n >= 1, t > 0")
    return min(1.0, 2.0 * c_moment * n * t ** (-1.0 - delta))
