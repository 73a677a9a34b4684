"""Exact finite-horizon computations used as ground truth.

Truncation is handled by a monotone sandwich.  The emigration kernel is
stochastically monotone in the current state, so

* the *lower* chain, which treats every state above ``M`` as surviving
  forever, under-estimates ``P[tau < n]``;
* the *upper* chain, which sends every state above ``M`` back to ``M``,
  over-estimates it.

Heavy tails are folded the same way: optimistically (more offspring, less
emigration) in the lower chain, pessimistically in the upper chain.  The
gap between the two chains is the certified truncation error.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import DepthTooShallow, InvalidParam, StateSpaceTooLarge, TruncationTooTight
from .laws import DiscreteLaw, GenerationModel

MAX_TRUNCATION = 4096
MAX_SUPPORT = 10_000_000


@dataclass
class _Marginal:
    """Finite pmf on ``0..len-1`` plus a lumped top atom.

    ``top`` is the mass of the lump; ``top_value`` is ``math.inf`` or a
    finite value that is already included in ``p``.
    """

    p: np.ndarray
    top: float


def _offspring_marginal(law: DiscreteLaw, cap: int, optimistic: bool) -> _Marginal:
    if law.tail is None:
        p, _ = law.pmf_array(int(law.max_value))
        return _Marginal(p, 0.0)
    p, rest = law.pmf_array(cap)
    if optimistic:
        return _Marginal(p, rest)  # rest goes to +inf
    p = p.copy()
    p[-1] += rest
    return _Marginal(p, 0.0)


def _emigration_marginal(law: DiscreteLaw, cap: int, optimistic: bool) -> _Marginal:
    if law.tail is None:
        p, _ = law.pmf_array(int(law.max_value))
        return _Marginal(p, 0.0)
    p, rest = law.pmf_array(cap)
    if optimistic:
        p = np.append(p, rest)  # lump at cap + 1
        return _Marginal(p, 0.0)
    return _Marginal(p, rest)  # rest kills


@dataclass
class _Generation:
    """One generation in finite form.

    ``d`` is the pmf of ``xi_1 - Y`` on ``d_min .. d_min + len(d) - 1``;
    ``kill`` is the mass where the emigration exceeds every finite sum and
    ``explode`` the mass where an offspring draw is infinite.  ``xi`` holds
    the finite part of the law of the remaining offspring draws, with
    ``xi_inf`` lumped at infinity.
    """

    d: np.ndarray
    d_min: int
    kill: float
    explode: float
    xi: np.ndarray
    xi_inf: float


def _generation(model: GenerationModel, xi_cap: int, y_cap: int, optimistic: bool):
    xi = _offspring_marginal(model.offspring, xi_cap, optimistic)
    y = _emigration_marginal(model.emigration, y_cap, optimistic)
    d_min = -(len(y.p) - 1)
    if model.coupling == "independent":
        d = np.convolve(xi.p, y.p[::-1])
        fin_xi = xi.p.sum()
        kill = y.top * fin_xi
        explode = xi.top
    else:
        d, kill, explode = _comonotone_difference(xi, y)
    return _Generation(d, d_min, kill, explode, xi.p, xi.top)


def _comonotone_difference(xi: _Marginal, y: _Marginal):
    """Law of ``xi - Y`` when both are quantiles of one uniform."""
    cx = np.concatenate([np.cumsum(xi.p), [1.0]])  # last level: +inf lump
    cy = np.concatenate([np.cumsum(y.p), [1.0]])  # last level: kill lump
    levels = np.unique(np.clip(np.concatenate([cx, cy]), 0.0, 1.0))
    prev = 0.0
    ny = len(y.p)
    d = np.zeros(len(xi.p) + ny - 1)
    kill = explode = 0.0
    for cur in levels:
        mass = cur - prev
        if mass <= 0:
            continue
        mid = 0.5 * (prev + cur)
        i = int(np.searchsorted(cx, mid, side="left"))
        j = int(np.searchsorted(cy, mid, side="left"))
        if i >= len(xi.p):
            explode += mass
        elif j >= ny:
            kill += mass
        else:
            d[i - j + ny - 1] += mass
        prev = cur
    return d, kill, explode


class _Kernel:
    """Transition rows of the truncated chain on ``{0..M}`` plus "above"."""

    def __init__(self, model: GenerationModel, M: int, optimistic: bool):
        off, emi = model.offspring, model.emigration
        y_fin = emi.max_value if emi.tail is None else None
        if off.tail is None:
            xi_cap = int(off.max_value)
        else:
            xi_cap = M + (y_fin if y_fin is not None else 16 * M) + 1
        if y_fin is not None:
            y_cap = int(y_fin)
        else:
            y_cap = min(M * xi_cap, 16 * M)
        self.gen = _generation(model, xi_cap, y_cap, optimistic)
        self.M = M
        self.rows = self._build()

    def _build(self):
        g, M = self.gen, self.M
        y_span = -g.d_min
        L = M + y_span + 1
        if L * (M + 1) > 50 * MAX_SUPPORT:
            raise StateSpaceTooLarge(f"truncation {M} needs support {L}")
        rows = np.zeros((M + 1, M + 2))  # column M+1 = above
        rows[0, 0] = 1.0
        s_fin = np.zeros(L + 1)
        s_fin[0] = 1.0  # S'_0 = 0
        s_over = 0.0  # mass of S' in (L, inf)
        s_inf = 0.0
        for z in range(1, M + 1):
            row = rows[z]
            row[0] += g.kill
            row[M + 1] += g.explode + (1.0 - g.kill - g.explode - g.d.sum())
            dmass = g.d.sum()
            conv = np.convolve(g.d, s_fin)  # value = index + d_min
            vals = np.arange(len(conv)) + g.d_min
            row[0] += conv[vals <= 0].sum()
            mid = (vals >= 1) & (vals <= M)
            row[vals[mid]] += conv[mid]
            row[M + 1] += conv[vals > M].sum() + dmass * (s_over + s_inf)
            # advance S' by one more offspring draw
            nxt = np.convolve(s_fin, g.xi)
            s_over = s_over * (1.0 - g.xi_inf) + nxt[L + 1:].sum()
            s_inf = s_inf + (1.0 - s_inf) * g.xi_inf if g.xi_inf else s_inf
            s_fin = nxt[:L + 1]
        # numerical hygiene: rows are probability vectors
        rows[rows < 0] = 0.0
        return rows

    def matrix(self, redirect_above: bool) -> np.ndarray:
        M = self.M
        T = self.rows[:, :M + 1].copy()
        if redirect_above:
            T[:, M] += self.rows[:, M + 1]
        return T


def sum_minus_emigration(model: GenerationModel, n: int, optimistic: bool,
                         xi_cap: Optional[int] = None):
    """Law of ``xi_1 + ... + xi_n - Y`` in finite form.

    Returns ``(pmf, v_min, kill, explode)``: ``pmf[i]`` is the mass at value
    ``v_min + i``; ``kill`` is mass at minus infinity (emigration above the
    folding cap, pessimistic reading) and ``explode`` mass at plus infinity.
    """
    off, emi = model.offspring, model.emigration
    if xi_cap is None:
        xi_cap = int(off.max_value) if off.tail is None else 4 * n + 64
    y_cap = int(emi.max_value) if emi.tail is None else (n + 1) * xi_cap + 1
    if (n * xi_cap + y_cap) > MAX_SUPPORT:
        raise StateSpaceTooLarge(f"convolution support {n * xi_cap + y_cap} too large")
    g = _generation(model, xi_cap, y_cap, optimistic)
    s = np.array([1.0])
    for _ in range(n - 1):
        s = np.convolve(s, g.xi)
    fin = g.d.sum()
    pm = np.convolve(g.d, s)
    explode = g.explode + fin * (1.0 - s.sum())
    return pm, g.d_min, g.kill, explode


# -- forward DP ------------------------------------------------------------


@dataclass
class DpResult:
    """Finite-horizon law of the extinction time.

    ``probs[n-1]`` is a certified lower bound for ``P[tau < n | Z_0 = k]``,
    ``n = 1..N``; the true value lies in ``[probs, probs_upper]`` and thus
    within ``error_bound`` of ``probs``.  ``leaked_mass`` is the total mass
    the lower chain pushed above ``M``.
    """

    k: int
    N: int
    M: int
    probs: list
    probs_upper: list
    leaked_mass: float
    error_bound: float

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "N": self.N, "M": self.M,
                           "probs": self.probs, "error_bound": self.error_bound})


def _dp_once(model, k, N, M):
    lo_kernel = _Kernel(model, M, optimistic=True)
    hi_kernel = _Kernel(model, M, optimistic=False)
    T_lo = lo_kernel.matrix(False)
    T_hi = hi_kernel.matrix(True)
    p_lo = np.zeros(M + 1)
    p_lo[k] = 1.0
    p_hi = p_lo.copy()
    lo, hi = [0.0], [0.0]
    leaked = 0.0
    for _ in range(1, N):
        nxt = p_lo @ T_lo
        leaked += p_lo.sum() - nxt.sum()
        p_lo = nxt
        p_hi = p_hi @ T_hi
        lo.append(float(min(p_lo[0], 1.0)))
        hi.append(float(min(p_hi[0], 1.0)))
    err = max(h - l for l, h in zip(lo, hi))
    return DpResult(k, N, M, lo, hi, float(leaked), float(max(err, 0.0)))


def default_truncation(model: GenerationModel, k: int) -> int:
    emi = model.emigration
    base = 2 * k + (int(emi.max_value) if emi.tail is None else 0) + 16
    return 1 << max(5, math.ceil(math.log2(base)))


def forward_dp_tau(model: GenerationModel, k: int, N: int, M: Optional[int] = None,
                   tol: float = 1e-9) -> DpResult:
    """Exact ``P[tau < n | Z_0 = k]`` for ``n = 1..N`` by forward propagation.

    With ``M=None`` the truncation starts at :func:`default_truncation` and
    doubles until the certified error is at most ``tol``.
    """
    if k < 1 or N < 1:
        raise InvalidParam("k and N must be positive")
    if M is not None:
        if M < k:
            raise InvalidParam("truncation M must be at least k")
        res = _dp_once(model, k, N, M)
        if res.error_bound > tol:
            raise TruncationTooTight(
                f"error bound {res.error_bound:.3g} exceeds tolerance {tol:.3g} at M={M}")
        return res
    M = max(default_truncation(model, k), k)
    while True:
        res = _dp_once(model, k, N, M)
        if res.error_bound <= tol:
            return res
        if 2 * M > MAX_TRUNCATION:
            raise TruncationTooTight(
                f"error bound {res.error_bound:.3g} exceeds tolerance {tol:.3g} at M={M}")
        M *= 2


@dataclass
class TauBounds:
    lower: float
    upper: Optional[float]
    infinite: bool
    survival_at_N: float
    method: str
    survival: list = field(default_factory=list)


def expected_tau_bounds(model: GenerationModel, k: int, N: int, M: Optional[int] = None,
                        tol: float = 1e-9) -> TauBounds:
    """Bounds on ``E[tau] = sum_n P[tau > n]`` from the forward DP.

    The lower bound sums the certified survival probabilities up to ``N``.
    An upper bound is returned when survival at ``N`` has fallen below
    ``tol`` (exactly when it is zero, by geometric extrapolation of the
    last decay ratio otherwise).  A survival curve that has flattened out
    above ``tol`` is flagged as ``infinite``.
    """
    dp = forward_dp_tau(model, k, N + 1, M, tol)
    surv_lo = [1.0 - h for h in dp.probs_upper]  # P[tau > n], n = 0..N
    surv_hi = [1.0 - l for l in dp.probs]
    lower = float(sum(surv_lo[:N]))
    s_n = surv_hi[N]
    if s_n <= 1e-300:
        return TauBounds(lower, float(sum(surv_hi[:N])), False, s_n, "exact", surv_lo)
    if s_n <= tol:
        prev = surv_hi[N - 1]
        rho = s_n / prev if prev > 0 else 0.0
        if rho < 1:
            upper = float(sum(surv_hi[:N + 1]) + s_n * rho / (1 - rho))
            return TauBounds(lower, upper, False, s_n, "geometric extrapolation", surv_lo)
    half = surv_lo[max(N // 2, 1)]
    flat = surv_lo[N] > tol and abs(half - surv_lo[N]) <= 1e-3 * surv_lo[N]
    return TauBounds(lower, None, flat, s_n, "plateau" if flat else "lower bound only",
                     surv_lo)


# -- perpetuity bracket ----------------------------------------------------------


@dataclass
class PerpetuityBracket:
    lower: float
    upper: float
    depth: int
    safe_level: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


def perpetuity_bracket(lam: int, y_law: DiscreteLaw, k: int, depth: int,
                       tol: Optional[float] = None) -> PerpetuityBracket:
    """Bracket ``P[hat X_n < k for all n]`` for constant offspring ``lam``.

    Works with the integer chain ``hat Z_{n+1} = lam hat Z_n - Y_{n+1}``,
    for which ``hat X_n < k`` iff ``hat Z_n > 0``.  Once
    ``hat Z_n >= B / (lam - 1)`` (``B`` the largest emigration value) the
    chain can never come down again, so after ``depth`` steps the mass is
    split into certainly-dead, certainly-safe and undecided; the undecided
    mass is the bracket width.
    """
    if int(lam) != lam or lam < 2:
        raise InvalidParam("lam must be an integer >= 2")
    if y_law.tail is not None:
        raise InvalidParam("perpetuity_bracket needs a finite-support emigration law")
    lam = int(lam)
    B = int(y_law.max_value)
    safe = max(math.ceil(B / (lam - 1)), 1)
    if k >= safe:
        return PerpetuityBracket(1.0, 1.0, depth, B / (lam - 1))
    ys, ps = y_law.values.astype(np.int64), y_law.probs
    p = np.zeros(safe)  # states 1..safe-1 at index z
    p[k] = 1.0
    dead = done = 0.0
    z = np.arange(safe, dtype=np.int64)
    for _ in range(depth):
        nxt = np.zeros(safe)
        for y, py in zip(ys, ps):
            w = lam * z - y
            mass = p * py
            dead += mass[(w <= 0) & (z >= 1)].sum()
            done += mass[(w >= safe) & (z >= 1)].sum()
            ok = (w >= 1) & (w < safe) & (z >= 1)
            np.add.at(nxt, w[ok], mass[ok])
        p = nxt
        if p.sum() == 0:
            break
    res = PerpetuityBracket(float(done), float(1.0 - dead), depth, B / (lam - 1))
    if tol is not None and res.width > tol:
        raise DepthTooShallow(f"bracket width {res.width:.3g} exceeds {tol:.3g} at depth {depth}")
    return res
