"""Monte-Carlo control: the general stochastic-approximation scheme and the
first-visit algorithm (infinite and finite episodes), with exact-metric traces.

Float MDPs run the first-visit loop in the compiled kernel; exact MDPs (and
the general scheme, whose schedules are arbitrary Python callables) run in
Python on top of :func:`fvmc.episodes.sample_episode`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np

from . import _kernels as K
from .episodes import (
    Absorbed,
    AbsorbingSpec,
    ContractError,
    Start,
    Tail,
    check_absorbing,
    horizon_for_tolerance,
    mode_args,
    sample_episode,
)
from .mdp import Mdp, StationaryPolicy
from .rng import SeedSpec, as_key, base_key, episode_key_py
from .solvers import epsilon_greedy, greedy_weights, policy_evaluation, value_iteration

FORMAT_VERSION = 1
DEFAULT_STRIDE = 100
TRUNCATION_TOL = 1e-9
# post-absorption steps simulated by the infinite-episode variant
INFINITE_OVERRUN = 2


def default_mode(m: Mdp, finite=False, tolerance=TRUNCATION_TOL):
    """Episode shape used by the algorithms for ``m``.

    With a triangle, episodes stop at absorption (``finite``) or shortly after
    it. Without one, infinite episodes are cut once every first-visit return
    is within ``tolerance * (1 - gamma)`` of its infinite sum.
    """
    if m.triangle is not None:
        return Absorbed(AbsorbingSpec(m.triangle), overrun=0 if finite else INFINITE_OVERRUN)
    if finite:
        raise ContractError("finite-episode first-visit needs an absorbing set")
    gamma = float(m.gamma)
    return Tail(horizon_for_tolerance(gamma, m.r_max, tolerance * (1 - gamma)))


class Prefix(NamedTuple):
    """Episode information available to a learning-rate rule at the first
    visit tau: states and actions up to tau, rewards r_1 .. r_tau."""

    states: tuple
    actions: tuple
    rewards: tuple


# ---------------------------------------------------------------- general


@dataclass
class GeneralState:
    q: np.ndarray
    k: int = 0
    visits: np.ndarray = None
    alpha_sum: np.ndarray = None
    alpha_sq_sum: np.ndarray = None
    last_visit: np.ndarray = None
    last_eps: np.ndarray = None

    @classmethod
    def initial(cls, m: Mdp, q0=None):
        q = m.zeros_q() if q0 is None else np.array(q0, dtype=m.dtype)
        return cls(
            q=q,
            visits=np.zeros(m.n_pairs, dtype=np.int64),
            alpha_sum=m.zeros_q(),
            alpha_sq_sum=m.zeros_q(),
            last_visit=np.full(m.n_pairs, -1, dtype=np.int64),
        )

    def copy(self):
        return replace(
            self,
            q=self.q.copy(),
            visits=self.visits.copy(),
            alpha_sum=self.alpha_sum.copy(),
            alpha_sq_sum=self.alpha_sq_sum.copy(),
            last_visit=self.last_visit.copy(),
        )


@dataclass
class Schedules:
    """Rules of the general scheme.

    ``epsilon(state, m)`` gives one exploration weight per state,
    ``alpha(state, m, pair_index, prefix)`` the learning rate of a visited
    pair, ``nu(state, m, policy)`` the law of the first state or pair.
    """

    epsilon: Callable
    alpha: Callable
    nu: Callable

    @classmethod
    def constant(cls, eps, alpha, start: Start):
        return cls(
            epsilon=lambda state, m: [eps] * m.n_states,
            alpha=lambda state, m, z, prefix: alpha,
            nu=lambda state, m, pi: start,
        )

    @classmethod
    def first_visit(cls, mu0: Start, theta=1):
        """Schedules under which the general scheme is the first-visit
        algorithm: eps = (1 + N(x))^-theta, alpha = 1 / N_{k+1}(x, a) and the
        start law mu0 x policy."""

        def epsilon(state, m):
            counts = _state_counts(m, state.visits)
            return [_decay(n, theta, m.exact) for n in counts]

        def alpha(state, m, z, prefix):
            n = int(state.visits[z]) + 1
            return Fraction(1, n) if m.exact else 1.0 / n

        return cls(epsilon=epsilon, alpha=alpha, nu=lambda state, m, pi: mu0)


def _decay(n, theta, exact):
    if exact and theta == 1:
        return Fraction(1, 1 + int(n))
    return (1.0 + n) ** (-theta)


def _state_counts(m: Mdp, pair_counts):
    return [int(pair_counts[m.state_slice(i)].sum()) for i in range(m.n_states)]


def _check_unit(values, what):
    for v in values:
        if not 0 <= v <= 1:
            raise ContractError(f"{what} value {v} outside [0, 1]")


def general_step(state: GeneralState, m: Mdp, schedules: Schedules, seed: SeedSpec, mode=None):
    """One episode of the general scheme; returns the new state.

    Builds the eps-greedy policy from ``state.q``, samples an episode from
    ``schedules.nu``, and moves every first-visited pair towards its return
    with weight alpha. Pairs not visited keep their value.
    """
    if mode is None:
        mode = default_mode(m)
    eps = list(schedules.epsilon(state, m))
    _check_unit(eps, "epsilon")
    pi = epsilon_greedy(m, state.q, eps)
    start = schedules.nu(state, m, pi)
    key = episode_key_py(base_key(seed.master_seed, seed.replicate), state.k)
    episode = sample_episode(m, pi, start, seed, mode, key=key)
    returns = episode.returns()
    new = state.copy()
    new.last_eps = np.asarray(eps, dtype=m.dtype)
    for z, t in episode.first_visit_table().items():
        prefix = Prefix(
            tuple(int(s) for s in episode.states[: t + 1]),
            tuple(int(a) for a in episode.actions[: t + 1]),
            tuple(episode.rewards[:t]),
        )
        alpha = schedules.alpha(state, m, z, prefix)
        _check_unit([alpha], "alpha")
        new.q[z] = (1 - alpha) * state.q[z] + alpha * returns[t]
        new.visits[z] += 1
        new.alpha_sum[z] += alpha
        new.alpha_sq_sum[z] += alpha * alpha
        new.last_visit[z] = state.k
    new.k = state.k + 1
    return new


# ------------------------------------------------------------ first visit


@dataclass
class FvaState:
    """Running state of the first-visit algorithm after ``k`` episodes."""

    q: np.ndarray
    n_pairs: np.ndarray
    n_states: np.ndarray
    sum_returns: np.ndarray
    k: int = 0
    theta: float = 1.0
    last_visit: np.ndarray = None

    @classmethod
    def initial(cls, m: Mdp, theta=1.0):
        if not theta > 0:
            raise ValueError("theta must be positive")
        return cls(
            q=m.zeros_q(),
            n_pairs=np.zeros(m.n_pairs, dtype=np.int64),
            n_states=np.zeros(m.n_states, dtype=np.int64),
            sum_returns=m.zeros_q(),
            theta=theta,
            last_visit=np.full(m.n_pairs, -1, dtype=np.int64),
        )

    def copy(self):
        return replace(
            self,
            q=self.q.copy(),
            n_pairs=self.n_pairs.copy(),
            n_states=self.n_states.copy(),
            sum_returns=self.sum_returns.copy(),
            last_visit=self.last_visit.copy(),
        )

    def epsilon(self, m: Mdp):
        return [_decay(n, self.theta, m.exact) for n in self.n_states]

    def policy(self, m: Mdp):
        return epsilon_greedy(m, self.q, self.epsilon(m))


def _fva_python_step(state: FvaState, m: Mdp, mu0: Start, seed: SeedSpec, mode):
    pi = state.policy(m)
    key = episode_key_py(base_key(seed.master_seed, seed.replicate), state.k)
    episode = sample_episode(m, pi, mu0, seed, mode, key=key)
    returns = episode.returns()
    new = state.copy()
    for z, t in episode.first_visit_table().items():
        new.sum_returns[z] += returns[t]
        new.n_pairs[z] += 1
        new.n_states[m.pair_state[z]] += 1
        new.q[z] = new.sum_returns[z] / new.n_pairs[z]
        new.last_visit[z] = state.k
    new.k = state.k + 1
    return new


def _fva_kernel_run(state: FvaState, m: Mdp, mu0: Start, seed: SeedSpec, mode, n_episodes):
    """Advance a float state by ``n_episodes`` in place using the kernel."""
    kind, horizon, triangle, overrun, cap = mode_args(m, mode, validate=False)
    tables = m.tables
    before = state.n_pairs.copy()
    status, _ = K.fva_batch(
        *tables.arrays(),
        tables.gamma,
        float(state.theta),
        mu0.cdf(m),
        as_key(base_key(seed.master_seed, seed.replicate)),
        state.k,
        n_episodes,
        kind,
        horizon,
        triangle,
        overrun,
        cap,
        state.q,
        state.sum_returns,
        state.n_pairs,
        state.n_states,
    )
    if status == K.CAP_EXCEEDED:
        raise ContractError(f"episode exceeded the safety cap of {cap} steps")
    # kernel batches only know that a pair moved, not when; record batch end
    state.last_visit[state.n_pairs != before] = state.k + n_episodes - 1
    state.k += n_episodes
    return state


def fva_step(state: FvaState, m: Mdp, mu0: Start, seed: SeedSpec, mode=None, finite=False):
    """One first-visit episode; returns the new state.

    ``finite=True`` (or an :class:`Absorbed` mode without overrun) is the
    finite-episode variant that stops at absorption.
    """
    if mode is None:
        mode = default_mode(m, finite=finite)
    if isinstance(mode, Absorbed):
        mode_args(m, mode)  # validates the triangle once
    if m.exact:
        return _fva_python_step(state, m, mu0, seed, mode)
    return _fva_kernel_run(state.copy(), m, mu0, seed, mode, 1)


# ------------------------------------------------------------------- runs


@dataclass
class TraceRow:
    k: int
    q_error: float
    v_error: float
    counts: list


@dataclass
class RunTrace:
    pairs: list
    rows: list = field(default_factory=list)

    def columns(self):
        return ["k", "q_error", "v_error"] + [f"n[{x}|{a}]" for x, a in self.pairs]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns())
            for row in self.rows:
                writer.writerow([row.k, repr(row.q_error), repr(row.v_error), *row.counts])

    @property
    def final(self):
        return self.rows[-1] if self.rows else None


@dataclass
class RunConfig:
    episodes: int
    theta: float = 1.0
    stride: int = DEFAULT_STRIDE
    tolerance: float = TRUNCATION_TOL
    mu0: Start | None = None
    schedules: Schedules | None = None
    q0: np.ndarray | None = None
    mode: object = None


class Reference(NamedTuple):
    v_star: np.ndarray
    q_star: np.ndarray


def reference(m: Mdp):
    v, q = value_iteration(m.as_float(), tol=1e-12)
    return Reference(v, q)


def run_metrics(m: Mdp, q, policy_probs, ref: Reference):
    mf = m.as_float()
    pi = StationaryPolicy(mf, np.array([float(p) for p in policy_probs]))
    v_pi = policy_evaluation(mf, pi)
    q_err = float(np.max(np.abs(np.array([float(v) for v in q]) - ref.q_star)))
    v_err = float(np.max(np.abs(v_pi - ref.v_star)))
    return q_err, v_err


def run(algorithm, m: Mdp, config: RunConfig, seed: SeedSpec, ref: Reference | None = None):
    """Execute ``config.episodes`` iterations; returns ``(final_state, trace)``.

    Every ``config.stride`` episodes (and after the last one) the trace
    records the sup-norm errors of Q^k against Q* and of V of the current
    policy against V*, both computed exactly by linear solves.
    """
    if algorithm not in ("general", "fva", "fva_finite"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if config.episodes < 0:
        raise ValueError("episode budget must be non-negative")
    if ref is None:
        ref = reference(m)
    mu0 = config.mu0 or Start.uniform_states(m)
    trace = RunTrace(list(m.pairs))
    finite = algorithm == "fva_finite"
    mode = config.mode or default_mode(m, finite=finite, tolerance=config.tolerance)
    if isinstance(mode, Absorbed):
        mode_args(m, mode)

    if algorithm == "general":
        schedules = config.schedules or Schedules.first_visit(mu0, config.theta)
        state = GeneralState.initial(m, config.q0)

        def advance(st, n):
            for _ in range(n):
                st = general_step(st, m, schedules, seed, mode)
            return st

        def snapshot(st):
            eps = list(schedules.epsilon(st, m))
            return st.q, greedy_weights(m, st.q, eps), list(st.visits)

    else:
        state = FvaState.initial(m, config.theta)

        def advance(st, n):
            if m.exact:
                for _ in range(n):
                    st = _fva_python_step(st, m, mu0, seed, mode)
                return st
            return _fva_kernel_run(st, m, mu0, seed, mode, n)

        def snapshot(st):
            return st.q, greedy_weights(m, st.q, st.epsilon(m)), list(st.n_pairs)

    done = 0
    stride = max(1, int(config.stride))
    while done < config.episodes:
        n = min(stride - done % stride, config.episodes - done)
        state = advance(state, n)
        done += n
        q, probs, counts = snapshot(state)
        q_err, v_err = run_metrics(m, q, probs, ref)
        trace.rows.append(TraceRow(done, q_err, v_err, [int(c) for c in counts]))
    return state, trace


# ------------------------------------------------------------------ audits


def harmonic(n, power=1):
    """Exact partial sum of 1 / l^power for l = 1..n."""
    return sum((Fraction(1, l**power) for l in range(1, n + 1)), Fraction(0))


@dataclass
class PairAudit:
    pair: tuple
    epsilon: float
    alpha_sum: object
    alpha_sq_sum: object
    visits: int
    flagged: bool


def check_cqdev(m: Mdp, state, stall_fraction=0.5):
    """Per-pair audit of the schedule conditions after a finished run.

    Reports the final exploration weight of the pair's state, the partial
    sums of alpha and alpha^2 over visiting episodes, and the visit count.
    A pair is flagged when it was never visited or not visited during the
    last ``stall_fraction`` of the run. For first-visit states alpha is
    1/N, so the sums are the exact harmonic partial sums.
    """
    if isinstance(state, FvaState):
        eps = state.epsilon(m)
        visits = state.n_pairs
        a_sum = [harmonic(int(n)) if m.exact else _harmonic_float(int(n)) for n in visits]
        a_sq = [harmonic(int(n), 2) if m.exact else _harmonic_float(int(n), 2) for n in visits]
    else:
        eps = state.last_eps if state.last_eps is not None else [1] * m.n_states
        visits = state.visits
        a_sum = list(state.alpha_sum)
        a_sq = list(state.alpha_sq_sum)
    horizon = state.k * (1 - stall_fraction)
    out = []
    for z, pair in enumerate(m.pairs):
        stalled = visits[z] == 0 or state.last_visit[z] < horizon
        out.append(
            PairAudit(pair, eps[m.pair_state[z]], a_sum[z], a_sq[z], int(visits[z]), bool(stalled))
        )
    return out


def _harmonic_float(n, power=1):
    return math.fsum(1.0 / l**power for l in range(1, n + 1))


# ---------------------------------------------------------------- coupling


@dataclass
class CouplingReport:
    ok: bool
    episodes: int
    mismatch: tuple | None = None
    detail: str = ""


def couple_alg2_alg3(m: Mdp, spec: AbsorbingSpec, mu0: Start, seed: SeedSpec, episodes, theta=1.0):
    """Run the infinite- and finite-episode first-visit variants on the same
    streams and compare them after every episode.

    The infinite variant keeps simulating a few steps inside the triangle
    (rewards there are exactly 0); the finite one stops on entry. Policies
    must agree bit for bit outside the triangle and Q tables on every pair
    whose state is outside it.
    """
    report = check_absorbing(m, spec)
    if not report.ok:
        raise ContractError(f"absorbing set fails its assumption: {report.summary()}")
    infinite_mode = Absorbed(spec, overrun=INFINITE_OVERRUN)
    finite_mode = Absorbed(spec, overrun=0)
    inside = [i for i, x in enumerate(m.states) if x not in spec.triangle]
    outer_pairs = [z for z in range(m.n_pairs) if m.pair_state[z] in inside]
    bar = FvaState.initial(m, theta)
    tilde = FvaState.initial(m, theta)
    for k in range(episodes + 1):
        pb = greedy_weights(m, bar.q, bar.epsilon(m))
        pt = greedy_weights(m, tilde.q, tilde.epsilon(m))
        for z in outer_pairs:
            if not _same(pb[z], pt[z]):
                return CouplingReport(False, k, (k,) + m.pairs[z], "policy")
            if not _same(bar.q[z], tilde.q[z]):
                return CouplingReport(False, k, (k,) + m.pairs[z], "q")
        if k == episodes:
            break
        if m.exact:
            bar = _fva_python_step(bar, m, mu0, seed, infinite_mode)
            tilde = _fva_python_step(tilde, m, mu0, seed, finite_mode)
        else:
            bar = _fva_kernel_run(bar, m, mu0, seed, infinite_mode, 1)
            tilde = _fva_kernel_run(tilde, m, mu0, seed, finite_mode, 1)
    return CouplingReport(True, episodes)


def _same(a, b):
    if isinstance(a, float) or isinstance(b, float):
        return np.float64(a).tobytes() == np.float64(b).tobytes()
    return a == b
