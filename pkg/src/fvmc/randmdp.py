"""Seeded random MDPs with rational probabilities.

Generation uses numpy's PCG64 (plain seed), independent of the counter-based
streams used for episodes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .mdp import Mdp, RewardDist


@dataclass(frozen=True)
class RandomMdpSpec:
    n_states: int = 3
    max_actions: int = 3
    gamma: Fraction = Fraction(1, 2)
    branching: int = 2  # max successors per pair
    reward_low: int = 0
    reward_high: int = 1
    absorbing_fraction: float = 0.0
    seed: int = 0
    denominator: int = 8  # probability and reward granularity
    fixed_actions: bool = False  # every state gets exactly max_actions
    random_rewards: bool = True  # False: every reward law is a Dirac mass
    acyclic: bool = False  # live state i only moves to later states

    def __post_init__(self):
        if self.n_states < 1 or self.max_actions < 1 or self.branching < 1:
            raise ValueError("n_states, max_actions and branching must be >= 1")
        if self.reward_low > self.reward_high:
            raise ValueError("empty reward range")
        if not 0 <= self.absorbing_fraction < 1:
            raise ValueError("absorbing_fraction must lie in [0, 1)")
        if self.denominator < 1:
            raise ValueError("denominator must be >= 1")
        g = Fraction(self.gamma)
        if not 0 <= g < 1:
            raise ValueError("gamma must lie in [0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["gamma"] = str(Fraction(self.gamma))
        return d


def _weights(rng, count, denominator):
    """``count`` positive rationals summing to one, on a grid of step
    ``1/(count * denominator)``."""
    raw = rng.integers(1, denominator + 1, size=count)
    total = int(raw.sum())
    return [Fraction(int(w), total) for w in raw]


def random_mdp(spec: RandomMdpSpec, exact=True) -> Mdp:
    """Draw an MDP; with ``absorbing_fraction > 0`` a triangle is attached
    that satisfies :func:`fvmc.episodes.check_absorbing` by construction."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_states
    states = [f"s{i}" for i in range(n)]
    n_tri = int(np.floor(spec.absorbing_fraction * n))
    if spec.absorbing_fraction > 0:
        n_tri = min(max(n_tri, 1), n - 1) if n > 1 else 0
    tri = states[n - n_tri :] if n_tri else []
    actions, transitions, rewards = {}, {}, {}
    for x in states:
        k = spec.max_actions if spec.fixed_actions else int(rng.integers(1, spec.max_actions + 1))
        actions[x] = [f"a{j}" for j in range(k)]
        for a in actions[x]:
            if x in tri:
                # absorbing: stay inside the triangle, pay nothing
                width = min(spec.branching, len(tri))
                succ = list(rng.choice(len(tri), size=width, replace=False))
                row = {tri[i]: w for i, w in zip(succ, _weights(rng, width, spec.denominator))}
                transitions[(x, a)] = row
                for y in row:
                    rewards[(x, a, y)] = RewardDist.dirac(Fraction(0))
                continue
            pool = list(range(states.index(x) + 1, n)) if spec.acyclic else list(range(n))
            width = min(spec.branching, len(pool))
            succ = [states[pool[i]] for i in rng.choice(len(pool), size=width, replace=False)]
            if tri and a == actions[x][0] and not any(y in tri for y in succ):
                # one route into the triangle per live state is enough
                succ[-1] = tri[int(rng.integers(len(tri)))]
                succ = list(dict.fromkeys(succ))
            row = dict(zip(succ, _weights(rng, len(succ), spec.denominator)))
            transitions[(x, a)] = row
            for y in row:
                lo, hi = spec.reward_low * spec.denominator, spec.reward_high * spec.denominator
                if not spec.random_rewards or rng.random() < 0.5:
                    value = Fraction(int(rng.integers(lo, hi + 1)), spec.denominator)
                    rewards[(x, a, y)] = RewardDist.dirac(value)
                else:
                    v1, v2 = (Fraction(int(v), spec.denominator) for v in rng.integers(lo, hi + 1, size=2))
                    if v1 == v2:
                        rewards[(x, a, y)] = RewardDist.dirac(v1)
                    else:
                        d = max(spec.denominator, 2)
                        p = Fraction(int(rng.integers(1, d)), d)
                        rewards[(x, a, y)] = RewardDist(((v1, p), (v2, 1 - p)))
    m = Mdp(states, actions, transitions, rewards, Fraction(spec.gamma), triangle=tri or None)
    return m if exact else m.as_float()
