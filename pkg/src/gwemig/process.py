"""Step and simulate engines for the emigration chain and its relatives.

All engines take an explicit :class:`numpy.random.Generator`.  The
vectorised :func:`step_many` is the workhorse; :func:`step` and
:func:`simulate` are thin single-path wrappers around it, so a single path
and a batch consume randomness in the same way.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import InvalidParam, NotDeterministic
from .laws import STATE_CAP, DiscreteLaw, GenerationModel, offspring_sums

VARIANTS = ("emigration", "renewal", "pure", "decomposition", "deterministic_ar")


def _saturation_level(law: DiscreteLaw) -> int:
    vmax = law.max_value
    if not math.isfinite(vmax):
        return STATE_CAP // 4
    return STATE_CAP // max(int(vmax), 1)


def draw_generation(model: GenerationModel, sizes, rng: np.random.Generator):
    """Offspring sums of ``sizes[i]`` parents and one emigration draw each.

    Under comonotone coupling the emigration draw shares its uniform with
    the first offspring draw of the generation.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    if model.coupling == "independent":
        y = model.emigration.sample(rng, sizes.shape)
        s = offspring_sums(model.offspring, sizes, rng)
        return s, np.asarray(y, dtype=np.int64)
    u = rng.random(sizes.shape)
    y = model.emigration.quantile(u)
    first = model.offspring.quantile(u)
    rest = offspring_sums(model.offspring, np.maximum(sizes - 1, 0), rng)
    s = np.where(sizes > 0, first + rest, 0)
    return s, np.asarray(y, dtype=np.int64)


def step_many(states, model: GenerationModel, rng: np.random.Generator):
    """One emigration step for every entry of ``states``.

    Zero is absorbing.  Entries at or beyond the saturation level are set to
    ``STATE_CAP`` and no longer stepped; the boolean array returned second
    marks them.
    """
    states = np.asarray(states, dtype=np.int64)
    out = states.copy()
    sat = states >= _saturation_level(model.offspring)
    live = (states > 0) & ~sat
    if np.any(live):
        s, y = draw_generation(model, states[live], rng)
        out[live] = np.maximum(s - y, 0)
    out[sat] = STATE_CAP
    return out, sat


def pure_step_many(states, law: DiscreteLaw, rng: np.random.Generator):
    states = np.asarray(states, dtype=np.int64)
    out = states.copy()
    sat = states >= _saturation_level(law)
    live = (states > 0) & ~sat
    if np.any(live):
        out[live] = offspring_sums(law, states[live], rng)
    out[sat] = STATE_CAP
    return out, sat


def step(state: int, model: GenerationModel, rng: np.random.Generator) -> int:
    """``(sum of state offspring draws - Y)_+``; 0 stays at 0."""
    if state == 0:
        return 0
    out, _ = step_many(np.array([state]), model, rng)
    return int(out[0])


def renewal_step(state: int, model: GenerationModel, initial_k: int,
                 rng: np.random.Generator) -> int:
    if state == 0:
        return initial_k
    return step(state, model, rng)


def pure_step(state: int, law: DiscreteLaw, rng: np.random.Generator) -> int:
    if state == 0:
        return 0
    out, _ = pure_step_many(np.array([state]), law, rng)
    return int(out[0])


def decompose_step(pair, model: GenerationModel, rng: np.random.Generator):
    """Advance ``(z1, z2)`` by one generation sharing one offspring stream.

    ``z1`` uses offspring draws ``1..z1`` and the emigration draw, ``z2``
    uses draws ``z1+1..z1+z2`` of the same generation.
    """
    z1, z2 = int(pair[0]), int(pair[1])
    if z1 == 0:
        # draw 1 then opens the z2 block; the emigration draw is unused
        return 0, int(offspring_sums(model.offspring, np.array([z2]), rng)[0])
    s1, y = draw_generation(model, np.array([z1]), rng)
    s2 = offspring_sums(model.offspring, np.array([z2]), rng)
    return max(int(s1[0]) - int(y[0]), 0), int(s2[0])


@dataclass(frozen=True)
class ProcessConfig:
    model: GenerationModel
    initial_k: int
    variant: str = "emigration"
    k0: Optional[int] = None

    def __post_init__(self):
        if self.initial_k < 1 or int(self.initial_k) != self.initial_k:
            raise InvalidParam("initial_k must be a positive integer")
        if self.variant not in VARIANTS:
            raise InvalidParam(f"variant must be one of {VARIANTS}")
        if self.variant == "deterministic_ar" and not self.model.offspring.is_constant:
            raise NotDeterministic("deterministic_ar needs a constant offspring law")
        if self.variant == "decomposition":
            if self.k0 is None or self.k0 <= self.initial_k:
                raise InvalidParam("decomposition needs k0 > initial_k")


@dataclass
class Trajectory:
    """One realised path ``Z_0..Z_H``.

    ``tau`` is the first hitting time of 0 (first return for the renewal
    variant) or ``None`` if the path was censored at the horizon.
    """

    states: list
    tau: Optional[int]
    martingale_path: list
    draws_seed: Optional[int] = None
    overflow: bool = False
    components: dict = field(default_factory=dict)


def _as_rng(rng_or_seed):
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed, None
    seed = int(rng_or_seed)
    return np.random.default_rng(seed), seed


def _martingale(states, lam):
    return [z / lam ** n for n, z in enumerate(states)]


def simulate(config: ProcessConfig, horizon: int, rng) -> Trajectory:
    """Run one path of ``config.variant`` up to ``horizon`` generations.

    ``rng`` is a Generator or an integer seed (recorded on the trajectory).
    Non-renewal variants stop at extinction.
    """
    if horizon < 1:
        raise InvalidParam("horizon must be >= 1")
    gen, seed = _as_rng(rng)
    model, k = config.model, config.initial_k
    if config.variant == "decomposition":
        return _simulate_decomposition(config, horizon, gen, seed)
    if config.variant == "deterministic_ar":
        return _simulate_ar(config, horizon, gen, seed)

    states = [k]
    tau = None
    overflow = False
    z = np.array([k], dtype=np.int64)
    for n in range(1, horizon + 1):
        if config.variant == "renewal" and z[0] == 0:
            z = np.array([k], dtype=np.int64)
        elif config.variant == "pure":
            z, sat = pure_step_many(z, model.offspring, gen)
            overflow |= bool(sat[0])
        else:
            z, sat = step_many(z, model, gen)
            overflow |= bool(sat[0])
        states.append(int(z[0]))
        if z[0] == 0 and tau is None:
            tau = n
            if config.variant != "renewal":
                break
    return Trajectory(states, tau, _martingale(states, model.lam), seed, overflow)


def _simulate_ar(config, horizon, gen, seed):
    lam = int(config.model.offspring.values[0])
    k = config.initial_k
    ys = []
    states = [k]
    tau = None
    for n in range(1, horizon + 1):
        _, y = draw_generation(config.model, np.array([states[-1]]), gen)
        ys.append(int(y[0]))
        states.append(max(lam * states[-1] - ys[-1], 0))
        if states[-1] == 0:
            tau = n
            break
    path = ar_closed_form(lam, k, ys)
    traj = Trajectory(states, tau, _martingale(states, lam), seed)
    traj.components = {"y": ys, "hat_z": path.hat_z, "hat_x": path.hat_x}
    return traj


def _simulate_decomposition(config, horizon, gen, seed):
    res = coupled_decomposition(config.model, config.initial_k, config.k0,
                                horizon, gen)
    states = res.z
    tau = next((n for n, v in enumerate(states) if n > 0 and v == 0), None)
    traj = Trajectory(states, tau, _martingale(states, config.model.lam), seed)
    traj.components = {"z1": res.z1, "z2": res.z2, "tries": res.tries,
                       "z1_first": res.z_first}
    return traj


class CoupledRun(NamedTuple):
    """Paths of ``Z`` (from generation 0) and the pair ``Z1, Z2`` (from 1)."""

    z: list
    z1: list
    z2: list
    tries: int
    z_first: int


def _individual_draws(model, n, rng):
    """``n`` offspring draws and one emigration draw, with coupling."""
    if model.coupling == "comonotone":
        u = rng.random()
        y = int(model.emigration.quantile(u))
        rest = model.offspring.sample(rng, max(n - 1, 0))
        first = np.array([model.offspring.quantile(u)], dtype=np.int64)
        draws = np.concatenate([first, rest]) if n > 0 else rest
    else:
        y = int(model.emigration.sample(rng))
        draws = model.offspring.sample(rng, n)
    return np.asarray(draws, dtype=np.int64), y


def coupled_decomposition(model: GenerationModel, k: int, k0: int, n_steps: int,
                          rng: np.random.Generator, max_tries: int = 100_000,
                          exact_first: bool = False) -> CoupledRun:
    """Run ``Z`` together with the decomposition pair on shared draws.

    The first generation of ``Z`` is resampled until ``Z_1 >= k0`` (or
    ``== k0`` with ``exact_first``).  From generation 1 on, every generation
    draws one offspring stream long enough for both ``Z`` and ``Z1 + Z2``;
    ``Z`` consumes draws ``1..Z_n``, ``Z1`` draws ``1..Z1_n`` and ``Z2`` draws
    ``Z1_n + 1..Z1_n + Z2_n``.
    """
    if k0 <= k:
        raise InvalidParam("k0 must exceed k")
    for tries in range(1, max_tries + 1):
        draws, y = _individual_draws(model, k, rng)
        z_first = max(int(draws.sum()) - y, 0)
        if z_first == k0 or (z_first > k0 and not exact_first):
            break
    else:
        raise InvalidParam(f"no first generation reached k0={k0} in {max_tries} tries")
    z, z1, z2 = [k, z_first], [k], [k0 - k]
    for _ in range(1, n_steps):
        a, b, c = z[-1], z1[-1], z2[-1]
        draws, y = _individual_draws(model, max(a, b + c), rng)
        cs = np.concatenate([[0], np.cumsum(draws)])
        z.append(max(int(cs[a]) - y, 0) if a > 0 else 0)
        z1.append(max(int(cs[b]) - y, 0) if b > 0 else 0)
        z2.append(int(cs[b + c] - cs[b]))
    return CoupledRun(z, z1, z2, tries, z_first)


def coupled_chains(model: GenerationModel, starts, horizon: int, rng: np.random.Generator):
    """Run several chains on one shared stream of generation draws.

    ``starts`` maps a name to ``(initial_state, kind)`` with ``kind`` one of
    ``"emigration"``, ``"pure"`` or ``"renewal"``.  Every generation draws
    enough individual offspring for the largest population and one
    emigration value; each chain uses the first ``Z_n`` offspring draws.
    Returns a dict of state lists.
    """
    paths = {name: [int(z)] for name, (z, _) in starts.items()}
    kinds = {name: kind for name, (_, kind) in starts.items()}
    for _ in range(horizon):
        need = max(p[-1] for p in paths.values())
        draws, y = _individual_draws(model, need, rng)
        cs = np.concatenate([[0], np.cumsum(draws)])
        for name, p in paths.items():
            z, kind = p[-1], kinds[name]
            if kind == "pure":
                p.append(int(cs[z]))
            elif z == 0:
                p.append(int(starts[name][0]) if kind == "renewal" else 0)
            else:
                p.append(max(int(cs[z]) - y, 0))
    return paths


class ARPath(NamedTuple):
    hat_z: list
    hat_x: list


def ar_closed_form(lam, k: int, y_draws: Sequence[int]) -> ARPath:
    """Closed form of the deterministic-offspring chain.

    ``hat_z[n] = lam**n * k - sum_j Y_j lam**(n-j)`` and
    ``hat_x[n] = sum_{j<=n} lam**-j Y_j``, so that ``Z_n = (hat_z[n])_+`` and
    ``Z_n > 0`` iff ``hat_x[n] < k``.  Integer ``lam`` gives exact integer
    ``hat_z`` and exact rational ``hat_x``.  ``lam`` may also be a constant
    offspring law.
    """
    if isinstance(lam, GenerationModel):
        lam = lam.offspring
    if isinstance(lam, DiscreteLaw):
        if not lam.is_constant:
            raise NotDeterministic("offspring law is not constant")
        lam = int(lam.values[0])
    if not lam > 1:
        raise InvalidParam("lambda must exceed 1")
    exact = float(lam).is_integer()
    if exact:
        lam = int(lam)
        hat_z, hat_x = [k], [Fraction(0)]
        for j, y in enumerate(y_draws, start=1):
            hat_z.append(lam * hat_z[-1] - int(y))
            hat_x.append(hat_x[-1] + Fraction(int(y), lam ** j))
    else:
        hat_z, hat_x = [float(k)], [0.0]
        for j, y in enumerate(y_draws, start=1):
            hat_z.append(lam * hat_z[-1] - y)
            hat_x.append(hat_x[-1] + y * lam ** -j)
    return ARPath(hat_z, hat_x)


def write_trajectories_csv(path, trajectories: Sequence[Trajectory]):
    """Long-format CSV with columns ``trial, n, z, martingale``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "n", "z", "martingale"])
        for i, tr in enumerate(trajectories):
            for n, (z, m) in enumerate(zip(tr.states, tr.martingale_path)):
                w.writerow([i, n, z, repr(float(m))])
