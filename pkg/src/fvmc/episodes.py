"""Seeded episode simulation, returns, first visits and absorbing sets."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels as K
from .mdp import Mdp, MdpError, StationaryPolicy
from .rng import SeedSpec, as_key

EPISODE_CAP = 10**7


class ContractError(RuntimeError):
    """A precondition of the simulation contract does not hold."""


@dataclass(frozen=True)
class SamplingTables:
    """Flat float arrays consumed by the kernels."""

    pair_state: np.ndarray
    starts: np.ndarray
    trans_cdf: np.ndarray
    rew_start: np.ndarray
    rew_count: np.ndarray
    rew_cdf: np.ndarray
    rew_val: np.ndarray
    gamma: float

    @classmethod
    def build(cls, m: Mdp):
        n = m.n_states
        P = m.P.astype(float)
        trans_cdf = np.empty_like(P)
        for z in range(m.n_pairs):
            trans_cdf[z] = K.plain_cdf(P[z])
        rew_start = np.zeros(m.n_pairs * n, dtype=np.int64)
        rew_count = np.zeros(m.n_pairs * n, dtype=np.int64)
        cdfs, vals = [], []
        for z, (x, a) in enumerate(m.pairs):
            for j, y in enumerate(m.states):
                dist = m.reward_dist(x, a, y)
                slot = z * n + j
                rew_start[slot] = len(vals)
                rew_count[slot] = len(dist.support)
                acc = 0.0
                for v, p in dist.support:
                    acc += float(p)
                    cdfs.append(acc)
                    vals.append(float(v))
        return cls(
            m.pair_state,
            m.action_start,
            trans_cdf,
            rew_start,
            rew_count,
            np.array(cdfs),
            np.array(vals),
            float(m.gamma),
        )

    def arrays(self):
        return (
            self.pair_state,
            self.starts,
            self.trans_cdf,
            self.rew_start,
            self.rew_count,
            self.rew_cdf,
            self.rew_val,
        )


# --------------------------------------------------------------------- modes


@dataclass(frozen=True)
class Truncated:
    """Exactly ``horizon`` transitions."""

    horizon: int


@dataclass(frozen=True)
class Tail:
    """Stop once ``horizon`` transitions have followed the latest first visit.

    Every first-visit return then keeps at least ``horizon`` rewards, so with
    :func:`horizon_for_tolerance` each one is within ``tol`` of the
    infinite-horizon return.
    """

    horizon: int


@dataclass(frozen=True)
class AbsorbingSpec:
    """The absorbing set (the triangle) of the MDP."""

    triangle: frozenset

    def __init__(self, triangle):
        object.__setattr__(self, "triangle", frozenset(triangle))

    def mask(self, m: Mdp):
        return np.array([x in self.triangle for x in m.states], dtype=np.bool_)


@dataclass(frozen=True)
class Absorbed:
    """Run until the state enters the triangle, then ``overrun`` extra steps.

    ``overrun > 0`` keeps simulating inside the triangle (all rewards are
    exactly 0 there), which is how the infinite-episode algorithm is
    truncated at absorption without changing any return.
    """

    spec: AbsorbingSpec
    overrun: int = 0
    cap: int = EPISODE_CAP


def mode_args(m: Mdp, mode, validate=True):
    """Translate a mode object into kernel arguments."""
    no_triangle = np.zeros(m.n_states, dtype=np.bool_)
    if isinstance(mode, Truncated):
        return K.TRUNCATED, int(mode.horizon), no_triangle, 0, max(EPISODE_CAP, mode.horizon)
    if isinstance(mode, Tail):
        return K.TAIL, int(mode.horizon), no_triangle, 0, EPISODE_CAP
    if isinstance(mode, Absorbed):
        if validate:
            report = check_absorbing(m, mode.spec)
            if not report.ok:
                raise ContractError(f"absorbing set fails its assumption: {report.summary()}")
        return K.ABSORBED, 0, mode.spec.mask(m), int(mode.overrun), int(mode.cap)
    raise ContractError(f"unknown episode mode {mode!r}")


# -------------------------------------------------------------------- starts


@dataclass(frozen=True)
class Start:
    """Initial law: over states (then A_0 from the policy) or over pairs."""

    probs: tuple
    over: str = "states"

    @classmethod
    def states(cls, probs):
        return cls(tuple(probs), "states")

    @classmethod
    def pairs(cls, probs):
        return cls(tuple(probs), "pairs")

    @classmethod
    def uniform_states(cls, m: Mdp):
        one = Fraction(1, m.n_states) if m.exact else 1.0 / m.n_states
        return cls.states([one] * m.n_states)

    @classmethod
    def at(cls, m: Mdp, x, a=None):
        """Point mass at state ``x`` (or at the pair ``(x, a)``)."""
        if a is None:
            probs = [0.0] * m.n_states
            probs[m.state_index[x]] = 1.0
            return cls.states(probs)
        probs = [0.0] * m.n_pairs
        probs[m.pair_index[(x, a)]] = 1.0
        return cls.pairs(probs)

    def cdf(self, m: Mdp):
        expected = m.n_states if self.over == "states" else m.n_pairs
        if len(self.probs) != expected:
            raise MdpError(f"start law over {self.over} needs {expected} entries")
        if any(p < 0 for p in self.probs) or abs(float(sum(self.probs)) - 1.0) > 1e-12:
            raise MdpError("start law is not a distribution")
        return K.plain_cdf(np.array([float(p) for p in self.probs]))


# ------------------------------------------------------------------ episodes


@dataclass
class Episode:
    """One trajectory: ``states[t], actions[t], rewards[t] = (x_t, a_t, r_{t+1})``.

    ``states`` has one more entry than ``actions``: the state reached after
    the last transition. Actions are pair indices into ``mdp.pairs``.
    ``absorbed_at`` is the entrance time into the triangle (absorbed mode).
    """

    mdp: Mdp
    states: np.ndarray
    actions: np.ndarray
    reward_idx: np.ndarray
    rewards: list
    absorbed_at: int | None = None
    mode: object = None
    _first: dict = field(default=None, repr=False)

    def __len__(self):
        return len(self.actions)

    def steps(self):
        """``(x_t, a_t, r_{t+1})`` with the MDP's own ids."""
        m = self.mdp
        return [(m.pairs[z][0], m.pairs[z][1], r) for z, r in zip(self.actions, self.rewards)]

    def scaled(self, factor):
        return Episode(
            self.mdp,
            self.states,
            self.actions,
            self.reward_idx,
            [factor * r for r in self.rewards],
            self.absorbed_at,
            self.mode,
        )

    def first_visit_table(self):
        if self._first is None:
            self._first = {}
            for t, z in enumerate(self.actions):
                self._first.setdefault(int(z), t)
        return self._first

    def returns(self, gamma=None):
        """Discounted returns from every step, computed backwards."""
        if gamma is None:
            gamma = self.mdp.gamma
        zero = Fraction(0) if isinstance(gamma, Fraction) else 0.0
        out = [zero] * (len(self.rewards) + 1)
        for t in range(len(self.rewards) - 1, -1, -1):
            out[t] = self.rewards[t] + gamma * out[t + 1]
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "a", "r"])
            for t, (x, a, r) in enumerate(self.steps()):
                writer.writerow([t, x, a, float(r)])


def policy_cdf(m: Mdp, pi: StationaryPolicy):
    probs = np.array([float(p) for p in pi.probs])
    return K.block_cdf(probs, m.action_start)


def sample_episode(m: Mdp, pi: StationaryPolicy, start: Start, seed: SeedSpec, mode, *, key=None):
    """Simulate one episode; a pure function of its arguments.

    ``key`` overrides the stream key derived from ``seed`` (used by the
    algorithm loops, which derive per-episode keys themselves).
    """
    kind, horizon, triangle, overrun, cap = mode_args(m, mode)
    tables = m.tables
    if key is None:
        key = seed.key()
    xs, acts, ridx, rvals, n, absorbed_at, status = K.sample_path(
        *tables.arrays(),
        policy_cdf(m, pi),
        start.over == "pairs",
        start.cdf(m),
        as_key(key),
        kind,
        horizon,
        triangle,
        overrun,
        cap,
    )
    if status == K.CAP_EXCEEDED:
        raise ContractError(f"episode exceeded the safety cap of {cap} steps")
    if m.exact:
        rewards = [_exact_reward(m, int(z), int(y), int(k)) for z, y, k in zip(acts, xs[1:], ridx)]
    else:
        rewards = [float(r) for r in rvals]
    return Episode(
        m,
        np.asarray(xs),
        np.asarray(acts),
        np.asarray(ridx),
        rewards,
        None if absorbed_at < 0 else int(absorbed_at),
        mode,
    )


def _exact_reward(m: Mdp, z, y, k):
    x, a = m.pairs[z]
    dist = m.reward_dist(x, a, m.states[y])
    offset = k - int(m.tables.rew_start[z * m.n_states + y])
    return dist.support[offset][0]


def discounted_return(e: Episode, t: int, gamma=None):
    """sum_s gamma^s r_{t+s+1} over the recorded steps from index ``t``."""
    if not 0 <= t <= len(e):
        raise IndexError(f"return index {t} outside [0, {len(e)}]")
    if gamma is None:
        gamma = e.mdp.gamma
    zero = Fraction(0) if isinstance(gamma, Fraction) else 0.0
    acc = zero
    for s in range(len(e) - 1, t - 1, -1):
        acc = e.rewards[s] + gamma * acc
    return acc


def first_visit(e: Episode, x, a):
    """Earliest step occupying ``(x, a)``, or None when it is never visited."""
    z = e.mdp.pair_index.get((x, a))
    if z is None:
        return None
    return e.first_visit_table().get(z)


# ---------------------------------------------------------- absorbing checks


@dataclass
class AbsorbingReport:
    zero_rewards: list = field(default_factory=list)
    closure: list = field(default_factory=list)
    unreachable: list = field(default_factory=list)

    @property
    def ok(self):
        return not (self.zero_rewards or self.closure or self.unreachable)

    def summary(self):
        parts = []
        if self.zero_rewards:
            parts.append(f"nonzero reward from triangle at {self.zero_rewards}")
        if self.closure:
            parts.append(f"triangle not closed at {self.closure}")
        if self.unreachable:
            parts.append(f"triangle unreachable from {self.unreachable}")
        return "; ".join(parts) or "ok"

    def to_dict(self):
        return {
            "ok": self.ok,
            "zero_rewards": [list(map(str, v)) for v in self.zero_rewards],
            "closure": [list(map(str, v)) for v in self.closure],
            "unreachable": [str(x) for x in self.unreachable],
        }


def check_absorbing(m: Mdp, spec: AbsorbingSpec) -> AbsorbingReport:
    """Check the three clauses of the absorbing-set assumption.

    (a) every reward law out of the triangle is the Dirac mass at 0,
    (b) the triangle is closed under every action,
    (c) from every state some state of the triangle is reachable through the
        support graph of max_a P(x, a, .).
    """
    report = AbsorbingReport()
    tri = spec.triangle
    for x in m.states:
        if x not in tri:
            continue
        for a in m.actions[x]:
            for y in m.states:
                if not m.reward_dist(x, a, y).is_zero():
                    report.zero_rewards.append((x, a, y))
            outside = sum(p for y, p in m.transitions[(x, a)].items() if y not in tri)
            if outside > 0:
                report.closure.append((x, a))
    # reverse BFS from the triangle over edges with positive max-probability
    preds = {y: set() for y in m.states}
    for (x, a), row in m.transitions.items():
        for y, p in row.items():
            if p > 0:
                preds[y].add(x)
    reached = set(tri)
    queue = deque(tri)
    while queue:
        y = queue.popleft()
        for x in preds[y]:
            if x not in reached:
                reached.add(x)
                queue.append(x)
    report.unreachable = [x for x in m.states if x not in reached]
    return report


def horizon_for_tolerance(gamma, r_max, tol):
    """Smallest T with gamma^T r_max / (1 - gamma) <= tol.

    Returns computed with T rewards then differ from the infinite sum by at
    most ``tol``. ``gamma = 0`` still needs one reward unless ``r_max <= tol``.
    """
    gamma = float(gamma)
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    if r_max < 0 or tol <= 0:
        raise ValueError("need r_max >= 0 and tol > 0")
    if r_max / (1 - gamma) <= tol:
        return 0
    if gamma == 0:
        return 1
    t = max(0, math.floor(math.log(tol * (1 - gamma) / r_max) / math.log(gamma)) - 1)
    while gamma**t * r_max / (1 - gamma) > tol:
        t += 1
    return t
