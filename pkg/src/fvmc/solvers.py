"""Exact and iterative solvers for V_pi, Q_pi, V*, Q* and the operator H.

All functions are pure. Float MDPs get float64 arrays; exact MDPs get
object arrays of Fractions (except :func:`value_iteration`, which is
inherently approximate and always works in float).
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from .linalg import identity, solve
from .mdp import Mdp, MdpError, StationaryPolicy

ENUMERATION_LIMIT = 10**6


class EnumerationTooLarge(MdpError):
    pass


def mean_reward(m: Mdp, x, a):
    """r(x, a): expected one-step reward of the pair."""
    try:
        return m.r[m.pair_index[(x, a)]]
    except KeyError:
        raise MdpError(f"unknown pair {(x, a)!r}") from None


def _state_sums(m: Mdp, values):
    """Sum a pair-indexed array over the actions of every state."""
    out = m.zeros_v()
    for i in range(m.n_states):
        out[i] = sum(values[m.state_slice(i)].tolist(), m.zero)
    return out


def policy_matrices(m: Mdp, pi: StationaryPolicy):
    """Return ``(r_pi, P_pi)`` for a stationary policy."""
    weights = pi.probs
    r_pi = _state_sums(m, m.r * weights)
    P_pi = np.array([[m.zero] * m.n_states for _ in range(m.n_states)], dtype=m.dtype)
    weighted = m.P * weights[:, None]
    for i in range(m.n_states):
        block = weighted[m.state_slice(i)]
        for j in range(m.n_states):
            P_pi[i, j] = sum(block[:, j].tolist(), m.zero)
    return r_pi, P_pi


def policy_evaluation(m: Mdp, pi: StationaryPolicy, method="linear_solve", tol=None):
    """V_pi, either by a direct solve of (I - gamma P_pi) V = r_pi or by
    iterating T_pi.

    With ``method="fixed_point"`` iteration stops once the sup-norm change
    drops below ``tol``; the returned table is then within
    ``tol * gamma / (1 - gamma)`` of V_pi.
    """
    r_pi, P_pi = policy_matrices(m, pi)
    if method == "linear_solve":
        lhs = identity(m.n_states, m.exact) - m.gamma * P_pi
        return solve(lhs, r_pi)
    if method == "fixed_point":
        if tol is None or tol <= 0:
            raise ValueError("fixed_point evaluation needs tol > 0")
        r_pi = r_pi.astype(float)
        P_pi = P_pi.astype(float)
        gamma = float(m.gamma)
        v = np.zeros(m.n_states)
        while True:
            nxt = r_pi + gamma * (P_pi @ v)
            change = np.max(np.abs(nxt - v))
            v = nxt
            if change < tol:
                return v
    raise ValueError(f"unknown evaluation method {method!r}")


def q_from_v(m: Mdp, v):
    """Q(x, a) = r(x, a) + gamma * sum_y P(x, a, y) v(y)."""
    v = np.asarray(v, dtype=m.dtype)
    out = m.zeros_q()
    for z in range(m.n_pairs):
        out[z] = m.r[z] + m.gamma * sum((m.P[z] * v).tolist(), m.zero)
    if not m.exact:
        out = out.astype(float)
    return out


def state_max(m: Mdp, q):
    out = m.zeros_v() if q.dtype == object else np.zeros(m.n_states)
    for i in range(m.n_states):
        out[i] = max(q[m.state_slice(i)].tolist())
    return out


def bellman_optimal(m: Mdp, v):
    """One application of the optimality operator: max_a [r + gamma P v]."""
    return state_max(m, q_from_v(m, v))


def _float_parts(m: Mdp):
    return m.r.astype(float), m.P.astype(float), float(m.gamma)


def value_iteration(m: Mdp, tol=1e-12, max_iter=10**7):
    """Iterate the optimality operator from 0 until ``||V - V*|| <= tol``.

    Stops at the first sup-norm change below ``tol (1 - gamma) / gamma``.
    Returns float ``(v_star, q_star)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    r, P, gamma = _float_parts(m)
    starts = m.action_start
    threshold = tol * (1 - gamma) / gamma if gamma > 0 else np.inf
    v = np.zeros(m.n_states)
    for _ in range(max_iter):
        q = r + gamma * (P @ v)
        nxt = np.maximum.reduceat(q, starts[:-1])
        change = np.max(np.abs(nxt - v))
        v = nxt
        if change < threshold:
            break
    else:  # pragma: no cover - unreachable for gamma < 1 and sane tol
        raise RuntimeError("value iteration did not converge")
    return v, r + gamma * (P @ v)


def policy_iteration(m: Mdp, max_iter=10_000):
    """Howard policy iteration with exact solves. Returns ``(V*, Q*, policy)``.

    Ties keep the incumbent action, so the loop stops exactly when no
    action strictly improves; in exact mode the result is exactly V*.
    """
    choice = {x: m.actions[x][0] for x in m.states}
    for _ in range(max_iter):
        pi = StationaryPolicy.deterministic(m, choice)
        v = policy_evaluation(m, pi)
        q = q_from_v(m, v)
        changed = False
        for i, x in enumerate(m.states):
            sl = m.state_slice(i)
            row = q[sl]
            best = max(row.tolist())
            current = row[m.actions[x].index(choice[x])]
            if current < best:
                choice[x] = m.actions[x][int(np.argmax(row == best))]
                changed = True
        if not changed:
            return v, q, pi
    raise RuntimeError("policy iteration did not terminate")  # pragma: no cover


def optimal_q(m: Mdp):
    """Q* in the MDP's own arithmetic (exact when ``m.exact``)."""
    if m.exact:
        return policy_iteration(m)[1]
    return value_iteration(m, tol=1e-13)[1]


def brute_force_optimal(m: Mdp, limit=ENUMERATION_LIMIT):
    """Evaluate every deterministic stationary policy and take the best.

    Returns ``(v_star, best_policy)`` where ``v_star`` is the pointwise max
    over all policies and ``best_policy`` attains it everywhere.
    """
    count = 1
    for x in m.states:
        count *= len(m.actions[x])
    if count > limit:
        raise EnumerationTooLarge(f"{count} deterministic policies exceed the limit {limit}")
    best_v = None
    best_choice, best_total = None, None
    for combo in itertools.product(*(m.actions[x] for x in m.states)):
        choice = dict(zip(m.states, combo))
        v = policy_evaluation(m, StationaryPolicy.deterministic(m, choice))
        # an optimal policy dominates every other one, so it also maximises the sum
        total = sum(v.tolist())
        if best_v is None:
            best_v, best_choice, best_total = v.copy(), choice, total
            continue
        if total > best_total:
            best_choice, best_total = choice, total
        best_v = np.array([max(p, q) for p, q in zip(v, best_v)], dtype=v.dtype)
    policy = StationaryPolicy.deterministic(m, best_choice)
    return best_v, policy


def _as_eps(m: Mdp, eps):
    if np.isscalar(eps) or isinstance(eps, Fraction):
        eps = [eps] * m.n_states
    if m.exact:
        eps = np.array([Fraction(e) for e in eps], dtype=object)
    else:
        eps = np.asarray(eps, dtype=float)
    if eps.shape != (m.n_states,):
        raise ValueError("eps must give one value per state")
    if any(e < 0 or e > 1 for e in eps):
        raise ValueError("eps values must lie in [0, 1]")
    return eps


def greedy_weights(m: Mdp, q, eps):
    """Raw epsilon-greedy probabilities as an array indexed like ``m.pairs``.

    The argmax set is the set of actions whose value equals the row maximum
    exactly; no tolerance is applied.
    """
    eps = _as_eps(m, eps)
    one = Fraction(1) if m.exact else 1.0
    probs = m.zeros_q()
    for i in range(m.n_states):
        sl = m.state_slice(i)
        row = q[sl]
        top = max(row.tolist())
        winners = [j for j, value in enumerate(row) if value == top]
        n = sl.stop - sl.start
        base = eps[i] / n
        bonus = (one - eps[i]) / len(winners)
        for j in range(n):
            probs[sl.start + j] = base + bonus if j in winners else base
    return probs


def epsilon_greedy(m: Mdp, q, eps):
    """The policy mixing eps(x)/|A_x| exploration with uniform mass on argmax q."""
    return StationaryPolicy(m, greedy_weights(m, np.asarray(q, dtype=m.dtype), eps))


def policy_q(m: Mdp, pi: StationaryPolicy):
    """Q_pi through an exact linear solve."""
    return q_from_v(m, policy_evaluation(m, pi))


def h_operator(m: Mdp, eps, q):
    """H(eps, q) = Q of the eps-greedy policy built on q."""
    return policy_q(m, epsilon_greedy(m, q, eps))


def sup_norm(values):
    values = np.asarray(values)
    if values.size == 0:
        return 0
    return max(abs(v) for v in values.tolist())


def contraction_sides(m: Mdp, eps, q, q_star=None):
    """Both sides of the H contraction estimate.

    Returns ``(lhs, rhs, dominance_gap)`` with ``lhs = ||H(eps, q) - Q*||``,
    ``rhs = gamma/(1-gamma) (||Q* - q|| + ||(q - Q*)+|| + 2 ||Q*|| ||eps||)``
    and ``dominance_gap = max(H(eps, q) - Q*)`` (should be <= 0).
    """
    if q_star is None:
        q_star = optimal_q(m)
    eps = _as_eps(m, eps)
    q = np.asarray(q, dtype=m.dtype)
    h = h_operator(m, eps, q)
    diff = q - q_star
    positive = np.array([max(d, m.zero) for d in diff.tolist()], dtype=m.dtype)
    factor = m.gamma / (1 - m.gamma)
    rhs = factor * (
        sup_norm(q_star - q) + sup_norm(positive) + 2 * sup_norm(q_star) * sup_norm(eps)
    )
    lhs = sup_norm(h - q_star)
    gap = max((h - q_star).tolist())
    return lhs, rhs, gap
