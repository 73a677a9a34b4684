"""Offspring and emigration laws on the nonnegative integers.

A :class:`DiscreteLaw` is a finite pmf core plus an optional analytic tail.
Two tail families are built in:

``pareto(alpha, t0)``
    ``X = ceil(V)`` with ``V`` continuous Pareto, so that
    ``P[X > t] = (t / t0) ** -alpha`` at every integer ``t >= t0``.
``example1(c, n0)``
    ``P[Y > e**n] = c / n`` for all integers ``n >= n0``.  The block
    ``(e**n, e**(n+1)]`` carries mass ``c/n - c/(n+1)`` on the single atom
    ``ceil(e**n)``; the remaining mass ``1 - c/n0`` sits at 0.

Moments of tailed laws are computed from the tail formulas, never from
samples, so divergent moments come back as ``math.inf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Union

import mpmath
import numpy as np
from scipy.special import zeta

from .errors import InvalidParam, NonNormalizable, NotSupercritical

STATE_CAP = 2 ** 62
INF = math.inf

# Terms kept in the Hurwitz-zeta expansions of log(1 + 1/x); x >= _X0 makes
# the neglected remainder far below double precision.
_X0 = 32
_ZETA_TERMS = 40


@dataclass(frozen=True)
class ParetoTail:
    alpha: float
    t0: float


@dataclass(frozen=True)
class Example1Tail:
    c: float
    n0: int


Tail = Union[ParetoTail, Example1Tail, None]


def _example1_atoms(n0: int) -> np.ndarray:
    """Exact atoms ``ceil(e**n)`` for ``n0 <= n`` while below STATE_CAP."""
    atoms = []
    with mpmath.workdps(60):
        n = n0
        while True:
            a = int(mpmath.ceil(mpmath.e ** n))
            if a > STATE_CAP:
                break
            atoms.append(a)
            n += 1
    return np.array(atoms, dtype=np.int64)


class DiscreteLaw:
    """Probability law on the nonnegative integers.

    Do not call the constructor directly; use :func:`make_law` or the
    helper constructors :func:`const`, :func:`pmf`, :func:`pareto`,
    :func:`example1`.
    """

    def __init__(self, values, probs, tail: Tail = None, tail_mass: float = 0.0):
        values = np.asarray(values, dtype=np.int64)
        probs = np.asarray(probs, dtype=float)
        order = np.argsort(values)
        self.values = values[order]
        self.probs = probs[order]
        self.values.setflags(write=False)
        self.probs.setflags(write=False)
        self.tail = tail
        self.tail_mass = float(tail_mass)
        self.core_mass = float(self.probs.sum())
        self._cum = np.cumsum(self.probs)
        self._atoms = (
            _example1_atoms(tail.n0) if isinstance(tail, Example1Tail) else None
        )
        self.mean = _mean(self)
        self.variance = _variance(self)

    # -- descriptors -----------------------------------------------------

    def to_descriptor(self) -> dict:
        if isinstance(self.tail, ParetoTail):
            return {"type": "pareto", "alpha": self.tail.alpha, "t0": self.tail.t0}
        if isinstance(self.tail, Example1Tail):
            return {"type": "example1", "c": self.tail.c, "n0": self.tail.n0}
        if len(self.values) == 1:
            return {"type": "const", "value": int(self.values[0])}
        return {
            "type": "pmf",
            "values": [int(v) for v in self.values],
            "probs": [float(p) for p in self.probs],
        }

    def __repr__(self):
        return f"DiscreteLaw({self.to_descriptor()})"

    def __eq__(self, other):
        if not isinstance(other, DiscreteLaw):
            return NotImplemented
        return self.to_descriptor() == other.to_descriptor()

    def __hash__(self):
        return hash(repr(self))

    # -- structural queries ---------------------------------------------

    @property
    def is_constant(self) -> bool:
        return self.tail is None and len(self.values) == 1

    @property
    def is_finite(self) -> bool:
        return self.tail is None

    @property
    def max_value(self) -> float:
        """Largest value in the support, ``inf`` for tailed laws."""
        return INF if self.tail is not None else int(self.values[-1])

    @property
    def min_value(self) -> int:
        if self.core_mass > 0:
            return int(self.values[np.argmax(self.probs > 0)])
        if isinstance(self.tail, ParetoTail):
            return math.ceil(self.tail.t0)
        return int(self._atoms[0])

    def prob_zero(self) -> float:
        return 1.0 - float(self.tail_fn(0))

    # -- tail and pmf ----------------------------------------------------

    def tail_fn(self, t):
        """``P[X > t]``; vectorised over ``t``."""
        t = np.asarray(t, dtype=float)
        m = np.floor(t)
        # core part: mass strictly above floor(t)
        if len(self.values):
            idx = np.searchsorted(self.values, m, side="right")
            below = np.where(idx > 0, self._cum[np.maximum(idx - 1, 0)], 0.0)
            core = np.clip(self.core_mass - below, 0.0, None)
        else:
            core = np.zeros_like(m)
        if self.tail is None:
            out = core
        elif isinstance(self.tail, ParetoTail):
            a, t0 = self.tail.alpha, self.tail.t0
            with np.errstate(divide="ignore"):
                pt = np.where(m < t0, 1.0, np.power(np.maximum(m, 1.0) / t0, -a))
            out = core + self.tail_mass * pt
        else:
            out = core + self._example1_tail(m)
        return out if out.ndim else float(out)

    def _example1_tail(self, m):
        c, n0 = self.tail.c, self.tail.n0
        atoms = self._atoms
        pos = np.searchsorted(atoms, np.minimum(m, float(atoms[-1])), side="right")
        nstar = (n0 + pos).astype(float)
        beyond = m >= atoms[-1]
        if np.any(beyond):
            with np.errstate(divide="ignore"):
                nstar = np.where(
                    beyond,
                    np.maximum(np.floor(np.log(np.maximum(m, 1.0))) + 1, n0 + len(atoms)),
                    nstar,
                )
        return c / nstar

    def tail_at_log(self, s):
        """``P[X > e**s]`` evaluated stably for very large ``s``."""
        s = np.asarray(s, dtype=float)
        small = s < 40.0
        out = np.empty_like(s)
        if np.any(small):
            out[small] = self.tail_fn(np.exp(s[small]))
        big = ~small
        if np.any(big):
            sb = s[big]
            if self.tail is None:
                out[big] = 0.0 if self.max_value < math.exp(40.0) else self.tail_fn(np.exp(sb))
            elif isinstance(self.tail, ParetoTail):
                a, t0 = self.tail.alpha, self.tail.t0
                out[big] = self.tail_mass * np.exp(-a * (sb - math.log(t0)))
            else:
                c, n0 = self.tail.c, self.tail.n0
                nstar = np.where(sb == np.floor(sb), sb, np.floor(sb) + 1)
                out[big] = c / np.maximum(nstar, n0)
        return out if out.ndim else float(out)

    def pmf_array(self, upto: int):
        """Exact masses ``P[X = x]`` for ``x = 0..upto`` and ``P[X > upto]``."""
        upto = int(upto)
        if self.tail is None:
            p = np.zeros(upto + 1)
            keep = self.values <= upto
            np.add.at(p, self.values[keep], self.probs[keep])
            rest = float(self.probs[~keep].sum())
            return p, rest
        x = np.arange(upto + 1, dtype=float)
        tails = np.asarray(self.tail_fn(x))
        p = np.empty(upto + 1)
        p[0] = 1.0 - tails[0]
        p[1:] = tails[:-1] - tails[1:]
        return np.clip(p, 0.0, None), float(tails[-1])

    # -- sampling ---------------------------------------------------------

    def quantile(self, u):
        """Generalised inverse cdf; nondecreasing in ``u``."""
        u = np.asarray(u, dtype=float)
        out = np.empty(u.shape, dtype=np.int64)
        in_core = u < self.core_mass
        if np.any(in_core):
            idx = np.searchsorted(self._cum, u[in_core], side="right")
            out[in_core] = self.values[np.minimum(idx, len(self.values) - 1)]
        rest = ~in_core
        if np.any(rest):
            if self.tail is None:
                out[rest] = self.values[-1]
            else:
                w = (u[rest] - self.core_mass) / self.tail_mass
                out[rest] = self._tail_quantile(np.clip(w, 0.0, 1.0))
        return out if out.ndim else int(out)

    def _tail_quantile(self, w):
        # w in [0, 1]; larger w -> larger value
        upper = np.maximum(1.0 - w, np.finfo(float).tiny)
        if isinstance(self.tail, ParetoTail):
            v = np.ceil(self.tail.t0 * np.power(upper, -1.0 / self.tail.alpha))
            return np.minimum(v, float(STATE_CAP)).astype(np.int64)
        # example1: upper ~ U(0, 1]; block index n = floor(n0 / upper)
        c, n0 = self.tail.c, self.tail.n0
        n = np.floor(n0 / upper)
        n = np.maximum(n, n0)
        idx = n - n0
        atoms = self._atoms
        inside = idx < len(atoms)
        out = np.full(w.shape, STATE_CAP, dtype=np.int64)
        out[inside] = atoms[idx[inside].astype(np.int64)]
        return out

    def sample(self, rng: np.random.Generator, size=None):
        if self.is_constant:
            v = int(self.values[0])
            return v if size is None else np.full(size, v, dtype=np.int64)
        return self.quantile(rng.random(size))


# -- moments ----------------------------------------------------------------


def _pareto_split(law: DiscreteLaw):
    """Integers below the zeta cutoff and the cutoff itself."""
    t0 = law.tail.t0
    x0 = max(_X0, math.ceil(t0) + 1)
    x = np.arange(x0, dtype=float)
    return x, x0


def _mean(law: DiscreteLaw) -> float:
    if law.tail is None:
        return float(np.dot(law.values, law.probs))
    if isinstance(law.tail, Example1Tail):
        return INF
    a, t0 = law.tail.alpha, law.tail.t0
    if a <= 1:
        return INF
    x, x0 = _pareto_split(law)
    return float(np.sum(law.tail_fn(x)) + t0 ** a * zeta(a, x0))


def _variance(law: DiscreteLaw) -> float:
    if law.tail is None:
        return float(np.dot(law.values.astype(float) ** 2, law.probs) - law.mean ** 2)
    if isinstance(law.tail, Example1Tail):
        return INF
    a, t0 = law.tail.alpha, law.tail.t0
    if a <= 2:
        return INF
    x, x0 = _pareto_split(law)
    second = np.sum(law.tail_fn(x) * (2 * x + 1)) + t0 ** a * (
        2 * zeta(a - 1, x0) + zeta(a, x0)
    )
    return float(second - law.mean ** 2)


def log_plus_moment(law: DiscreteLaw) -> float:
    """``E[log_+ X]``; ``inf`` when it diverges."""
    if law.tail is None:
        pos = law.values >= 1
        return float(np.dot(np.log(law.values[pos]), law.probs[pos]))
    if isinstance(law.tail, Example1Tail):
        return INF
    a, t0 = law.tail.alpha, law.tail.t0
    x, x0 = _pareto_split(law)
    x = x[1:]
    head = np.sum(law.tail_fn(x) * np.log1p(1.0 / x))
    j = np.arange(1, _ZETA_TERMS + 1)
    series = np.sum((-1.0) ** (j + 1) / j * zeta(a + j, x0))
    return float(head + t0 ** a * series)


def x_log_x_moment(law: DiscreteLaw) -> float:
    """``E[X log_+ X]``; ``inf`` when it diverges."""
    if law.tail is None:
        v = law.values.astype(float)
        pos = v >= 1
        return float(np.dot(v[pos] * np.log(v[pos]), law.probs[pos]))
    if isinstance(law.tail, Example1Tail):
        return INF
    a, t0 = law.tail.alpha, law.tail.t0
    if a <= 1:
        return INF
    x, x0 = _pareto_split(law)
    x = x[1:]
    dphi = (x + 1) * np.log(x + 1) - x * np.log(x)
    head = np.sum(law.tail_fn(x) * dphi)
    # (x+1)log(x+1) - x log x = log x + 1 + sum_m (-1)^(m+1) x^-m / (m(m+1))
    m = np.arange(1, _ZETA_TERMS + 1)
    series = (
        -float(mpmath.zeta(a, x0, 1))
        + zeta(a, x0)
        + np.sum((-1.0) ** (m + 1) / (m * (m + 1)) * zeta(a + m, x0))
    )
    return float(head + t0 ** a * series)


def power_moment_finite(law: DiscreteLaw, p: float) -> bool:
    """Whether ``E[X**p] < inf``."""
    if law.tail is None:
        return True
    if isinstance(law.tail, Example1Tail):
        return False
    return p < law.tail.alpha


# -- construction -----------------------------------------------------------


def const(value: int) -> DiscreteLaw:
    if value < 0 or int(value) != value:
        raise InvalidParam(f"constant law needs a nonnegative integer, got {value}")
    return DiscreteLaw([int(value)], [1.0])


def pmf(values, probs=None) -> DiscreteLaw:
    """Finite law from parallel ``values``/``probs`` or a ``{value: prob}`` map."""
    if probs is None:
        if not isinstance(values, Mapping):
            raise InvalidParam("pmf needs probs or a value->prob mapping")
        values, probs = list(values.keys()), list(values.values())
    values = [int(v) for v in values]
    probs = np.asarray(probs, dtype=float)
    if len(values) != len(probs) or len(values) == 0:
        raise InvalidParam("values and probs must be nonempty and of equal length")
    if any(v < 0 for v in values):
        raise InvalidParam("values must be nonnegative integers")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise InvalidParam("probabilities must be finite and nonnegative")
    total = probs.sum()
    if not total > 0 or abs(total - 1.0) > 1e-6:
        raise NonNormalizable(f"probabilities sum to {total}, not 1")
    # merge duplicates and drop zero-mass atoms
    merged = {}
    for v, p in zip(values, probs / total):
        merged[v] = merged.get(v, 0.0) + float(p)
    merged = {v: p for v, p in merged.items() if p > 0}
    return DiscreteLaw(list(merged.keys()), list(merged.values()))


def pareto(alpha: float, t0: float = 1.0) -> DiscreteLaw:
    if not alpha > 0 or not t0 > 0:
        raise InvalidParam(f"pareto needs alpha > 0 and t0 > 0, got {alpha}, {t0}")
    return DiscreteLaw([], [], ParetoTail(float(alpha), float(t0)), 1.0)


def example1(c: float, n0: int) -> DiscreteLaw:
    if not c > 0 or int(n0) != n0 or n0 < 1:
        raise InvalidParam(f"example1 needs c > 0 and integer n0 >= 1, got {c}, {n0}")
    if c / n0 > 1:
        raise InvalidParam(f"example1 needs c/n0 <= 1, got {c / n0}")
    zero = 1.0 - c / n0
    values, probs = ([0], [zero]) if zero > 0 else ([], [])
    return DiscreteLaw(values, probs, Example1Tail(float(c), int(n0)), c / n0)


def make_law(spec) -> DiscreteLaw:
    """Build a law from a JSON-style descriptor.

    Accepts ``{"type": "pmf", "values": [...], "probs": [...]}``,
    ``{"type": "const", "value": n}``, ``{"type": "pareto", "alpha": a,
    "t0": t}`` and ``{"type": "example1", "c": c, "n0": n}``.  An existing
    :class:`DiscreteLaw` is returned unchanged.
    """
    if isinstance(spec, DiscreteLaw):
        return spec
    if not isinstance(spec, Mapping) or "type" not in spec:
        raise InvalidParam(f"not a law descriptor: {spec!r}")
    kind = spec["type"]
    try:
        if kind == "const":
            return const(spec["value"])
        if kind == "pmf":
            return pmf(spec["values"], spec["probs"])
        if kind == "pareto":
            return pareto(spec["alpha"], spec.get("t0", 1.0))
        if kind == "example1":
            return example1(spec["c"], spec["n0"])
    except KeyError as exc:
        raise InvalidParam(f"law descriptor {spec!r} lacks field {exc}") from None
    raise InvalidParam(f"unknown law type {kind!r}")


def sample(law: DiscreteLaw, rng: np.random.Generator, size=None):
    return law.sample(rng, size)


def tail(law: DiscreteLaw, t):
    return law.tail_fn(t)


# -- generation model ---------------------------------------------------------

COUPLINGS = ("independent", "comonotone")


@dataclass(frozen=True)
class GenerationModel:
    """Joint law of one generation: offspring stream plus emigration.

    ``comonotone`` coupling draws the emigration from the same uniform as
    the first offspring draw of the generation.
    """

    offspring: DiscreteLaw
    emigration: DiscreteLaw
    coupling: str = "independent"

    def __post_init__(self):
        object.__setattr__(self, "offspring", make_law(self.offspring))
        object.__setattr__(self, "emigration", make_law(self.emigration))
        if self.coupling not in COUPLINGS:
            raise InvalidParam(f"coupling must be one of {COUPLINGS}")
        lam = self.offspring.mean
        if not math.isfinite(lam):
            raise InvalidParam("offspring mean must be finite")
        if lam <= 1:
            raise NotSupercritical(f"offspring mean {lam} is not > 1")

    @property
    def lam(self) -> float:
        return self.offspring.mean

    def to_descriptor(self) -> dict:
        return {
            "offspring": self.offspring.to_descriptor(),
            "emigration": self.emigration.to_descriptor(),
            "coupling": self.coupling,
        }

    @classmethod
    def from_descriptor(cls, d: Mapping) -> "GenerationModel":
        try:
            return cls(
                make_law(d["offspring"]),
                make_law(d["emigration"]),
                d.get("coupling", "independent"),
            )
        except KeyError as exc:
            raise InvalidParam(f"model descriptor lacks field {exc}") from None


# -- offspring sums -----------------------------------------------------------

_MAX_INDIVIDUAL_DRAWS = 50_000_000


def offspring_sums(law: DiscreteLaw, counts, rng: np.random.Generator) -> np.ndarray:
    """Sum of ``counts[i]`` i.i.d. draws from ``law`` for every ``i``.

    Finite laws aggregate by successive conditional binomials, so the cost
    does not depend on the size of ``counts``.  Tailed laws draw the tail
    individuals one by one.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if law.is_constant:
        return counts * int(law.values[0])
    total = np.zeros(counts.shape, dtype=np.int64)
    remaining = counts.copy()
    if law.tail is not None:
        in_tail = rng.binomial(remaining, law.tail_mass)
        remaining -= in_tail
        total += _tail_sums(law, in_tail, rng)
    if law.core_mass > 0:
        rem_p = law.core_mass
        last = len(law.values) - 1
        for i, (v, p) in enumerate(zip(law.values, law.probs)):
            if i == last:
                b = remaining
            else:
                b = rng.binomial(remaining, min(1.0, p / rem_p)) if rem_p > 0 else 0 * remaining
                rem_p -= p
            if v:
                total += b * int(v)
            remaining = remaining - b
    return total


def _tail_sums(law, n, rng):
    n_total = int(n.sum())
    out = np.zeros(n.shape, dtype=np.int64)
    if n_total == 0:
        return out
    if n_total > _MAX_INDIVIDUAL_DRAWS:
        raise InvalidParam("too many heavy-tailed offspring draws in one generation")
    draws = law._tail_quantile(rng.random(n_total))
    owners = np.repeat(np.arange(n.size), n.ravel())
    sums_f = np.bincount(owners, weights=draws.astype(float), minlength=n.size)
    sums_i = np.zeros(n.size, dtype=np.int64)
    np.add.at(sums_i, owners, np.minimum(draws, STATE_CAP // 4))
    res = np.where(sums_f >= STATE_CAP, STATE_CAP, sums_i)
    return res.reshape(n.shape)


# -- Galton-Watson extinction -------------------------------------------------

PGF_TRUNCATION = 10 ** 6


def truncated_pmf(law: DiscreteLaw, cap: int = PGF_TRUNCATION):
    """Finite pmf with mass above ``cap`` folded into the atom ``cap``."""
    if law.tail is None:
        return law.values.astype(np.int64), law.probs.copy(), 0.0
    p, rest = law.pmf_array(cap)
    p[-1] += rest
    nz = np.nonzero(p)[0]
    return nz.astype(np.int64), p[nz], rest


def gw_extinction_prob(law: DiscreteLaw, tol: float = 1e-12, with_error: bool = False):
    """Extinction probability of the pure Galton-Watson process from one
    ancestor: the smallest fixed point of the pgf in ``[0, 1]``.

    Iterates ``q <- f(q)`` from 0 until successive iterates differ by less
    than ``tol``.  Laws with an analytic tail are truncated at
    ``PGF_TRUNCATION``; folding the tail mass down raises the pgf, so the
    result is an upper bound and ``with_error=True`` also returns a bound on
    the overshoot.
    """
    if law.mean <= 1:
        raise NotSupercritical(f"offspring mean {law.mean} is not > 1")
    values, probs, folded = truncated_pmf(law)
    vf = values.astype(float)
    q = 0.0
    for _ in range(10_000_000):
        nq = float(np.dot(probs, np.power(q, vf)))
        if abs(nq - q) < tol:
            q = nq
            break
        q = nq
    if not with_error:
        return q
    deriv = float(np.dot(probs * vf, np.power(q, np.maximum(vf - 1, 0))))
    err = folded / max(1.0 - deriv, 1e-300) if folded else 0.0
    return q, err
