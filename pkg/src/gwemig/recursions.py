"""Certified constructions for the linear recursion ``x_{n+1} = a x_n - b_{n+1}``.

Inputs are converted to exact rationals through their decimal ``repr``
(so ``0.1`` means ``1/10``), and every certificate is re-checked in exact
rational arithmetic; floats are used only to steer the search.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import InvalidParam, SearchExhausted


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


def _floor_dyadic(x: float, bits: int = 30) -> Fraction:
    return Fraction(math.floor(x * 2 ** bits), 2 ** bits)


@dataclass(frozen=True)
class GrowthCertificate:
    """Schedule and rate showing ``x_n >= c**n`` for every ``n >= 1``.

    ``schedule`` holds ``c_1..c_N``; after step ``N`` the term subtracted
    at step ``n`` is ``(a - epsilon)**(n - 1)``.  ``tail_margin`` is a lower bound for
    ``x_n / a**n`` valid for all ``n >= N``.
    """

    a: Fraction
    epsilon: Fraction
    delta: Fraction
    N: int
    schedule: tuple
    c: Fraction
    tail_margin: Fraction

    def sequence(self, horizon: int):
        """Exact ``x_0..x_horizon``."""
        a, q = self.a, self.a - self.epsilon
        x = [Fraction(1)]
        qn = Fraction(1)  # (a - eps)**n
        for n in range(horizon):
            qn_next = qn * q
            if n <= self.N - 1:
                x.append(a * x[-1] - self.schedule[n])
            else:
                x.append(a * x[-1] - qn)
            qn = qn_next
        return x

    def verify(self, horizon: int = 1000) -> bool:
        """Exact replay of ``x_n >= c**n`` for ``n = 1..horizon``.

        Runs in integers over the fixed denominator
        ``D den(a)**n den(q)**n den(c)**n``, with ``D`` clearing the
        schedule, which avoids the gcd reductions of
        :class:`~fractions.Fraction` arithmetic.
        """
        if not self.c > 1:
            return False
        q = self.a - self.epsilon
        A, da = self.a.numerator, self.a.denominator
        Q, dq = q.numerator, q.denominator
        C, dc = self.c.numerator, self.c.denominator
        D = 1
        for n, b in enumerate(self.schedule[:horizon], start=1):
            d = (b * (da * dq) ** n).denominator
            D = D * d // math.gcd(D, d)
        lhs = D           # D x_n E_n dc**n with E_n = (da dq)**n
        rhs = D           # D C**n E_n
        En = 1
        dcn = 1
        tail = D          # D Q**(n-1) da**n dc**n, for the terms after N
        for n in range(1, horizon + 1):
            En *= da * dq
            dcn *= dc
            rhs *= C * da * dq
            tail = tail * da * dc if n == 1 else tail * Q * da * dc
            if n <= self.N:
                b = self.schedule[n - 1] * En * dcn * D
                lhs = A * dq * dc * lhs - b.numerator
            else:
                lhs = A * dq * dc * lhs - dq * tail
            if lhs < rhs:
                return False
        return True


def _verify_fractions(cert: GrowthCertificate, horizon: int) -> bool:
    x = cert.sequence(horizon)
    cn = Fraction(1)
    for n in range(1, horizon + 1):
        cn *= cert.c
        if x[n] < cn:
            return False
    return True


def lemma6_construct(a, epsilon, delta, horizon: int = 1000, n_limit: int = 200) -> GrowthCertificate:
    """Find ``N`` such that the schedule ``c_n = delta (a - epsilon)**n``,
    ``n <= N``, keeps ``x_n >= c**n`` for some ``c > 1``.

    For ``n >= N`` one has ``x_n / a**n >= x_N / a**N - r**N / epsilon``
    with ``r = (a - epsilon) / a``; when this margin ``L`` is positive, the
    rate ``c = min(min_{n<=N} x_n**(1/n), a L**(1/N))`` works for every ``n``.

    Raises
    ------
    SearchExhausted
        If no ``N <= n_limit`` yields a rate above 1.  Since ``x_N / a**N``
        tends to ``1 - delta (a - epsilon) / epsilon`` this happens whenever
        ``delta >= epsilon / (a - epsilon)``.
    """
    a, eps, dl = as_fraction(a), as_fraction(epsilon), as_fraction(delta)
    if not (a > 1 and eps > 0 and a - eps > 1):
        raise InvalidParam("need a > 1, epsilon > 0 and a - epsilon > 1")
    if not 0 < dl < 1:
        raise InvalidParam("delta must lie in (0, 1)")
    q = a - eps
    r = q / a
    x = Fraction(1)
    schedule = []
    logs = []  # log(x_n) / n for the current prefix
    for N in range(1, n_limit + 1):
        cN = dl * q ** N
        schedule.append(cN)
        x = a * x - cN
        if x <= 0:
            break
        logs.append(math.log(x) / N if x.denominator < 2 ** 900 else _log_frac(x) / N)
        L = x / a ** N - r ** N / eps
        if L <= 0:
            continue
        log_tail = math.log(a) + (_log_frac(L) / N if L < 1 else 0.0)
        rate = math.exp(min(min(logs), log_tail))
        if rate <= 1:
            continue
        c = _floor_dyadic(1 + (rate - 1) * 0.999)
        if c <= 1:
            continue
        cert = GrowthCertificate(a, eps, dl, N, tuple(schedule), c, L)
        if _prefix_ok(cert) and cert.verify(min(horizon, 4 * N + 8)):
            return cert
    raise SearchExhausted(f"no N <= {n_limit} certifies growth for a={a}, eps={eps}, delta={dl}")


def _log_frac(x: Fraction) -> float:
    return math.log(x.numerator) - math.log(x.denominator)


def _prefix_ok(cert: GrowthCertificate) -> bool:
    """Exact check of ``c**n <= x_n`` for ``n <= N`` and ``c**n <= L a**n``
    for ``n >= N`` (which holds for all larger ``n`` once it holds at ``N``
    because ``c <= a``)."""
    x = cert.sequence(cert.N)
    cn = Fraction(1)
    for n in range(1, cert.N + 1):
        cn *= cert.c
        if x[n] < cn:
            return False
    return cert.c <= cert.a and cn <= cert.tail_margin * cert.a ** cert.N


@dataclass(frozen=True)
class FloorCertificate:
    """``epsilon2`` keeping every recursion ``l = 1..N-1`` above ``epsilon1``."""

    a: Fraction
    epsilon1: Fraction
    N: int
    epsilon2: Fraction

    def sequence(self, l: int):
        return _lemma7_sequence(self.a, self.epsilon1, self.epsilon2, self.N, l)

    def margin(self) -> Fraction:
        return min(min(self.sequence(l)[1:]) for l in range(1, self.N)) - self.epsilon1

    def verify(self) -> bool:
        return _lemma7_ok(self.a, self.epsilon1, self.epsilon2, self.N)


def _lemma7_sequence(a, e1, e2, N, l):
    q = a - e1
    x = [Fraction(1)]
    qn = Fraction(1)
    for n in range(N):
        b = qn if n == l else e2 * qn
        x.append(a * x[-1] - b)
        qn *= q
    return x


def _lemma7_ok(a, e1, e2, N) -> bool:
    for l in range(1, N):
        if min(_lemma7_sequence(a, e1, e2, N, l)[1:]) < e1:
            return False
    return True


def lemma7_epsilon2(a, epsilon1, N: int, iterations: int = 40, max_halvings: int = 200) -> FloorCertificate:
    """Largest dyadic ``epsilon2`` (to ``iterations`` bisection steps) such
    that for each ``l = 1..N-1`` the recursion subtracting
    ``(a - epsilon1)**l`` at step ``l`` and ``epsilon2 (a - epsilon1)**n``
    elsewhere stays at or above ``epsilon1`` up to ``N``.

    Feasibility is monotone in ``epsilon2``, so any smaller value certifies
    as well.
    """
    a, e1 = as_fraction(a), as_fraction(epsilon1)
    if not (a > 1 and e1 > 0 and a - e1 > 1):
        raise InvalidParam("need a > 1, epsilon1 > 0 and a - epsilon1 > 1")
    if N < 2:
        raise InvalidParam("N must be at least 2")
    lo = Fraction(1)
    if _lemma7_ok(a, e1, lo, N):
        hi = None
    else:
        hi = lo
        for _ in range(max_halvings):
            lo /= 2
            if _lemma7_ok(a, e1, lo, N):
                break
            hi = lo
        else:
            raise SearchExhausted("no epsilon2 found by halving")
    if hi is None:
        # grow until infeasible, then bisect
        hi = lo * 2
        while _lemma7_ok(a, e1, hi, N):
            lo, hi = hi, hi * 2
            if hi > 2 ** 64:
                return FloorCertificate(a, e1, N, lo)
    for _ in range(iterations):
        mid = (lo + hi) / 2
        if _lemma7_ok(a, e1, mid, N):
            lo = mid
        else:
            hi = mid
    return FloorCertificate(a, e1, N, lo)
