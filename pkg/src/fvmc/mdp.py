"""Finite MDPs: states, per-state action sets, kernel, reward laws, discount.

Numbers are either all ``float`` (default) or all ``fractions.Fraction``
(exact mode). Exact mode is what the rational counter-example and the
bit-exact tests run on; ``Mdp.as_float`` / ``Mdp.as_exact`` convert.

Value tables are plain numpy arrays: a value function is indexed like
``mdp.states`` and a Q-function like ``mdp.pairs``. Exact tables use
``dtype=object`` holding Fractions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np

ROW_TOL = 1e-12


class MdpError(ValueError):
    """An MDP, policy or table violates its invariants."""


def parse_number(value, exact):
    """Parse a JSON number or ``"p/q"`` string."""
    if isinstance(value, bool):
        raise MdpError(f"not a number: {value!r}")
    if isinstance(value, str):
        try:
            frac = Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise MdpError(f"bad rational string {value!r}") from exc
        return frac if exact else float(frac)
    if isinstance(value, (int, float, Fraction)):
        if exact:
            return Fraction(str(value)) if isinstance(value, float) else Fraction(value)
        return float(value)
    raise MdpError(f"not a number: {value!r}")


def format_number(value):
    if isinstance(value, Fraction):
        return str(value) if value.denominator != 1 else str(value.numerator)
    return float(value)


@dataclass(frozen=True)
class RewardDist:
    """Finite-support law of the reward: ``((value, prob), ...)``."""

    support: tuple

    def __post_init__(self):
        support = tuple((v, p) for v, p in self.support)
        if not support:
            raise MdpError("reward distribution needs a non-empty support")
        if any(p < 0 for _, p in support):
            raise MdpError("negative reward probability")
        object.__setattr__(self, "support", support)

    @classmethod
    def dirac(cls, value):
        one = Fraction(1) if isinstance(value, Fraction) else 1.0
        return cls(((value, one),))

    @property
    def mean(self):
        return sum(v * p for v, p in self.support)

    @property
    def total(self):
        return sum(p for _, p in self.support)

    def is_zero(self):
        return all(v == 0 for v, p in self.support if p > 0)

    def convert(self, conv):
        return RewardDist(tuple((conv(v), conv(p)) for v, p in self.support))


class Mdp:
    """A finite discounted MDP.

    ``transitions[(x, a)]`` maps next states to probabilities (missing entries
    are 0); ``rewards[(x, a, y)]`` is a :class:`RewardDist` (missing means the
    reward is identically 0). ``triangle`` optionally lists absorbing states.
    """

    def __init__(self, states, actions, transitions, rewards, gamma, triangle=None):
        self.states = list(states)
        self.actions = {x: list(actions[x]) for x in self.states}
        self.transitions = {k: dict(v) for k, v in transitions.items()}
        self.rewards = dict(rewards)
        self.gamma = gamma
        self.triangle = None if triangle is None else list(triangle)
        self.exact = isinstance(gamma, Fraction)
        self._check_structure()

    # ------------------------------------------------------------------ checks

    def _check_structure(self):
        if not self.states:
            raise MdpError("state space must be non-empty")
        if len(set(self.states)) != len(self.states):
            raise MdpError("duplicate state ids")
        if not 0 <= self.gamma < 1:
            raise MdpError(f"gamma must lie in [0, 1), got {self.gamma}")
        known = set(self.states)
        for x in self.states:
            if not self.actions.get(x):
                raise MdpError(f"state {x!r} has no action")
            if len(set(self.actions[x])) != len(self.actions[x]):
                raise MdpError(f"duplicate actions at state {x!r}")
        pairs = set(self.pairs)
        for key in self.transitions:
            if key not in pairs:
                raise MdpError(f"transition for unknown pair {key!r}")
        for x, a in self.pairs:
            if (x, a) not in self.transitions:
                raise MdpError(f"missing transition row for {(x, a)!r}")
            for y in self.transitions[(x, a)]:
                if y not in known:
                    raise MdpError(f"transition to unknown state {y!r}")
        for key in self.rewards:
            if len(key) != 3 or (key[0], key[1]) not in pairs or key[2] not in known:
                raise MdpError(f"reward for unknown triple {key!r}")
        if self.triangle is not None:
            for x in self.triangle:
                if x not in known:
                    raise MdpError(f"triangle lists unknown state {x!r}")

    def violations(self):
        """Semantic problems with probabilities (empty list when valid)."""
        found = []
        for x, a in self.pairs:
            row = self.transitions[(x, a)]
            if any(p < 0 for p in row.values()):
                found.append(f"negative transition probability at {x}|{a}")
            if not _sums_to_one(sum(row.values())):
                found.append(f"transition row {x}|{a} sums to {float(sum(row.values()))!r}")
        for (x, a, y), dist in self.rewards.items():
            if not _sums_to_one(dist.total):
                found.append(f"reward law {x}|{a}|{y} sums to {float(dist.total)!r}")
        return found

    def validate(self):
        found = self.violations()
        if found:
            raise MdpError("; ".join(found))
        return self

    # --------------------------------------------------------------- indexing

    @cached_property
    def pairs(self):
        return [(x, a) for x in self.states for a in self.actions[x]]

    @cached_property
    def state_index(self):
        return {x: i for i, x in enumerate(self.states)}

    @cached_property
    def pair_index(self):
        return {z: i for i, z in enumerate(self.pairs)}

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n_pairs(self):
        return len(self.pairs)

    @cached_property
    def pair_state(self):
        """State index of every pair."""
        return np.array([self.state_index[x] for x, _ in self.pairs], dtype=np.int64)

    @cached_property
    def action_start(self):
        starts = np.zeros(self.n_states + 1, dtype=np.int64)
        for i, x in enumerate(self.states):
            starts[i + 1] = starts[i] + len(self.actions[x])
        return starts

    def state_slice(self, i):
        return slice(int(self.action_start[i]), int(self.action_start[i + 1]))

    def reward_dist(self, x, a, y):
        dist = self.rewards.get((x, a, y))
        if dist is None:
            return RewardDist.dirac(self.zero)
        return dist

    @property
    def zero(self):
        return Fraction(0) if self.exact else 0.0

    @property
    def dtype(self):
        return object if self.exact else np.float64

    def zeros_v(self):
        return np.array([self.zero] * self.n_states, dtype=self.dtype)

    def zeros_q(self):
        return np.array([self.zero] * self.n_pairs, dtype=self.dtype)

    # ----------------------------------------------------------- dense tables

    @cached_property
    def P(self):
        """Kernel as an ``(n_pairs, n_states)`` matrix."""
        mat = np.array([[self.zero] * self.n_states for _ in self.pairs], dtype=self.dtype)
        for z, key in enumerate(self.pairs):
            for y, p in self.transitions[key].items():
                mat[z, self.state_index[y]] = p
        return mat

    @cached_property
    def g(self):
        """Mean reward of every (pair, next state)."""
        mat = np.array([[self.zero] * self.n_states for _ in self.pairs], dtype=self.dtype)
        for z, (x, a) in enumerate(self.pairs):
            for j, y in enumerate(self.states):
                mat[z, j] = self.reward_dist(x, a, y).mean
        return mat

    @cached_property
    def r(self):
        """Mean instantaneous reward r(x, a) of every pair."""
        return np.array(
            [sum((self.P[z] * self.g[z]).tolist(), self.zero) for z in range(self.n_pairs)],
            dtype=self.dtype,
        )

    @cached_property
    def r_max(self):
        """Largest absolute reward value with positive probability."""
        best = 0.0
        for (x, a, y), dist in self.rewards.items():
            if self.transitions[(x, a)].get(y, 0) <= 0:
                continue
            for v, p in dist.support:
                if p > 0:
                    best = max(best, abs(float(v)))
        return best

    @cached_property
    def tables(self):
        from .episodes import SamplingTables

        return SamplingTables.build(self)

    # ------------------------------------------------------------ conversion

    def _convert(self, conv, gamma):
        return Mdp(
            self.states,
            self.actions,
            {k: {y: conv(p) for y, p in row.items()} for k, row in self.transitions.items()},
            {k: d.convert(conv) for k, d in self.rewards.items()},
            gamma,
            self.triangle,
        )

    def as_float(self):
        if not self.exact:
            return self
        return self._convert(float, float(self.gamma))

    def as_exact(self):
        if self.exact:
            return self

        def conv(v):
            return Fraction(str(v)) if isinstance(v, float) else Fraction(v)

        return self._convert(conv, conv(self.gamma))

    def with_gamma(self, gamma):
        gamma = Fraction(gamma) if self.exact else float(gamma)
        return Mdp(self.states, self.actions, self.transitions, self.rewards, gamma, self.triangle)

    def with_triangle(self, triangle):
        return Mdp(self.states, self.actions, self.transitions, self.rewards, self.gamma, triangle)

    def q_table(self, q):
        """``{(x, a): value}`` view of a Q array."""
        return {z: q[i] for i, z in enumerate(self.pairs)}

    # ------------------------------------------------------------------ JSON

    @classmethod
    def from_json(cls, doc, exact=None):
        """Build from the interchange document (dict or JSON text).

        ``exact`` defaults to True when gamma is given as a rational string.
        """
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        if not isinstance(doc, dict):
            raise MdpError("MDP document must be a JSON object")
        missing = [k for k in ("gamma", "states", "actions", "transitions") if k not in doc]
        if missing:
            raise MdpError(f"MDP document lacks {', '.join(missing)}")
        if exact is None:
            exact = isinstance(doc["gamma"], str)
        states = [str(s) for s in doc["states"]]
        actions = {str(x): [str(a) for a in acts] for x, acts in doc["actions"].items()}
        for x in states:
            actions.setdefault(x, [])
        transitions = {}
        for key, row in doc["transitions"].items():
            x, a = _split_key(key, 2)
            transitions[(x, a)] = {str(y): parse_number(p, exact) for y, p in row.items()}
        rewards = {}
        for key, support in doc.get("rewards", {}).items():
            x, a, y = _split_key(key, 3)
            try:
                pairs = tuple((parse_number(v, exact), parse_number(p, exact)) for v, p in support)
            except (TypeError, ValueError) as exc:
                raise MdpError(f"bad reward support for {key}") from exc
            rewards[(x, a, y)] = RewardDist(pairs)
        triangle = doc.get("triangle")
        if triangle is not None:
            triangle = [str(s) for s in triangle]
        return cls(states, actions, transitions, rewards, parse_number(doc["gamma"], exact), triangle)

    @classmethod
    def load(cls, path, exact=None):
        return cls.from_json(Path(path).read_text(), exact=exact)

    def to_json(self):
        doc = {
            "gamma": format_number(self.gamma),
            "states": [str(x) for x in self.states],
            "actions": {str(x): [str(a) for a in self.actions[x]] for x in self.states},
            "transitions": {
                f"{x}|{a}": {str(y): format_number(p) for y, p in self.transitions[(x, a)].items()}
                for x, a in self.pairs
            },
            "rewards": {
                f"{x}|{a}|{y}": [[format_number(v), format_number(p)] for v, p in d.support]
                for (x, a, y), d in self.rewards.items()
            },
        }
        if self.triangle is not None:
            doc["triangle"] = [str(x) for x in self.triangle]
        return doc

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    def __repr__(self):
        mode = "exact" if self.exact else "float"
        return f"Mdp(states={self.n_states}, pairs={self.n_pairs}, gamma={self.gamma}, {mode})"


def _split_key(key, n):
    parts = str(key).split("|")
    if len(parts) != n:
        raise MdpError(f"key {key!r} should have {n} '|'-separated parts")
    return tuple(parts)


def _sums_to_one(total):
    if isinstance(total, Fraction):
        return total == 1
    return abs(total - 1.0) <= ROW_TOL


class StationaryPolicy:
    """Per-state action distribution stored as an array indexed like ``mdp.pairs``."""

    def __init__(self, mdp, probs):
        probs = np.asarray(probs, dtype=mdp.dtype)
        if probs.shape != (mdp.n_pairs,):
            raise MdpError(f"policy needs {mdp.n_pairs} entries, got {probs.shape}")
        for i in range(mdp.n_states):
            row = probs[mdp.state_slice(i)]
            if any(p < 0 for p in row) or not _sums_to_one(sum(row.tolist(), mdp.zero)):
                raise MdpError(f"policy row for state {mdp.states[i]!r} is not a distribution")
        self.mdp = mdp
        self.probs = probs

    @classmethod
    def deterministic(cls, mdp, choice):
        """``choice`` maps each state to the action taken with probability one."""
        one = Fraction(1) if mdp.exact else 1.0
        probs = mdp.zeros_q()
        for x in mdp.states:
            probs[mdp.pair_index[(x, choice[x])]] = one
        return cls(mdp, probs)

    @classmethod
    def uniform(cls, mdp):
        probs = mdp.zeros_q()
        for i, x in enumerate(mdp.states):
            n = len(mdp.actions[x])
            probs[mdp.state_slice(i)] = Fraction(1, n) if mdp.exact else 1.0 / n
        return cls(mdp, probs)

    def row(self, x):
        return self.probs[self.mdp.state_slice(self.mdp.state_index[x])]

    def __getitem__(self, key):
        return self.probs[self.mdp.pair_index[key]]

    def is_positive(self):
        return all(p > 0 for p in self.probs)

    def __repr__(self):
        return f"StationaryPolicy({self.mdp.q_table(self.probs)})"
