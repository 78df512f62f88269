"""Hot loops: episode sampling, batched first-visit updates, Robbins-Monro.

Everything here sticks to the numba nopython subset (flat float/int arrays,
no Python objects) so that :func:`fvmc._accel.njit` can compile it or leave
it as plain Python. Higher-level modules wrap these with friendlier types.
"""

import numpy as np

from ._accel import njit
from .rng import episode_key, uniform

TRUNCATED = 0
TAIL = 1
ABSORBED = 2

OK = 0
CAP_EXCEEDED = 1


@njit
def pick(cdf, lo, hi, u):
    """Inverse-CDF draw over ``cdf[lo:hi]`` (cumulative, stored order)."""
    for i in range(lo, hi):
        if u < cdf[i]:
            return i
    # u above the rounded total: fall back to the last entry with mass
    for i in range(hi - 1, lo - 1, -1):
        prev = cdf[i - 1] if i > lo else 0.0
        if cdf[i] > prev:
            return i
    return hi - 1


@njit
def block_cdf(probs, starts):
    """Cumulative sums restarted at each state's action block."""
    out = np.empty(probs.shape[0])
    for s in range(starts.shape[0] - 1):
        acc = 0.0
        for z in range(starts[s], starts[s + 1]):
            acc += probs[z]
            out[z] = acc
    return out


@njit
def plain_cdf(probs):
    out = np.empty(probs.shape[0])
    acc = 0.0
    for i in range(probs.shape[0]):
        acc += probs[i]
        out[i] = acc
    return out


@njit
def greedy_probs(q, eps, starts, out):
    """Epsilon-greedy weights; ties are exact equality with the row max."""
    for s in range(starts.shape[0] - 1):
        lo = starts[s]
        hi = starts[s + 1]
        top = q[lo]
        for z in range(lo + 1, hi):
            if q[z] > top:
                top = q[z]
        winners = 0
        for z in range(lo, hi):
            if q[z] == top:
                winners += 1
        base = eps[s] / (hi - lo)
        bonus = (1.0 - eps[s]) / winners
        for z in range(lo, hi):
            if q[z] == top:
                out[z] = base + bonus
            else:
                out[z] = base
    return out


@njit
def _grow_int(a):
    b = np.empty(a.shape[0] * 2, dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@njit
def _grow_float(a):
    b = np.empty(a.shape[0] * 2)
    b[: a.shape[0]] = a
    return b


@njit
def sample_path(
    pair_state,
    starts,
    trans_cdf,
    rew_start,
    rew_count,
    rew_cdf,
    rew_val,
    pol_cdf,
    start_pairs,
    start_cdf,
    key,
    mode,
    horizon,
    triangle,
    overrun,
    cap,
):
    """Simulate one episode.

    Returns ``(states, actions, reward_idx, rewards, n_steps, absorbed_at,
    status)``; ``states`` has ``n_steps + 1`` entries, the others
    ``n_steps``. Draw order per step: action, next state, reward.
    """
    n_states = starts.shape[0] - 1
    size = 64
    xs = np.empty(size + 1, dtype=np.int64)
    acts = np.empty(size, dtype=np.int64)
    ridx = np.empty(size, dtype=np.int64)
    rvals = np.empty(size)
    seen = np.zeros(pair_state.shape[0], dtype=np.bool_)

    c = 0
    pending = -1
    if start_pairs:
        pending = pick(start_cdf, 0, start_cdf.shape[0], uniform(key, c))
        x = pair_state[pending]
    else:
        x = pick(start_cdf, 0, n_states, uniform(key, c))
    c += 1
    xs[0] = x
    absorbed_at = -1
    if mode == ABSORBED and triangle[x]:
        absorbed_at = 0
    last_new = 0
    t = 0
    status = OK
    while True:
        if mode == TRUNCATED and t >= horizon:
            break
        if mode == TAIL and t > 0 and t - last_new >= horizon:
            break
        if mode == ABSORBED and absorbed_at >= 0 and t - absorbed_at >= overrun:
            break
        if t >= cap:
            status = CAP_EXCEEDED
            break
        if t == 0 and pending >= 0:
            z = pending
        else:
            z = pick(pol_cdf, starts[x], starts[x + 1], uniform(key, c))
            c += 1
        if not seen[z]:
            seen[z] = True
            last_new = t
        y = pick(trans_cdf[z], 0, n_states, uniform(key, c))
        c += 1
        slot = z * n_states + y
        lo = rew_start[slot]
        k = pick(rew_cdf, lo, lo + rew_count[slot], uniform(key, c))
        c += 1
        if t >= size:
            acts = _grow_int(acts)
            ridx = _grow_int(ridx)
            rvals = _grow_float(rvals)
            xs = _grow_int(xs)
            size = acts.shape[0]
        acts[t] = z
        ridx[t] = k
        rvals[t] = rew_val[k]
        t += 1
        xs[t] = y
        x = y
        if mode == ABSORBED and absorbed_at < 0 and triangle[x]:
            absorbed_at = t
    return xs[: t + 1], acts[:t], ridx[:t], rvals[:t], t, absorbed_at, status


@njit
def backward_returns(rewards, gamma, n):
    """G[t] = r[t] + gamma * G[t + 1] with G[n] = 0 (Horner form)."""
    g = np.zeros(n + 1)
    for t in range(n - 1, -1, -1):
        g[t] = rewards[t] + gamma * g[t + 1]
    return g


@njit
def first_visits(acts, n_pairs):
    first = np.full(n_pairs, -1, dtype=np.int64)
    for t in range(acts.shape[0]):
        z = acts[t]
        if first[z] < 0:
            first[z] = t
    return first


@njit
def fva_batch(
    pair_state,
    starts,
    trans_cdf,
    rew_start,
    rew_count,
    rew_cdf,
    rew_val,
    gamma,
    theta,
    mu0_cdf,
    base_key,
    k0,
    n_episodes,
    mode,
    horizon,
    triangle,
    overrun,
    cap,
    q,
    sum_returns,
    n_pair,
    n_state,
):
    """Run ``n_episodes`` first-visit iterations in place.

    ``q``, ``sum_returns``, ``n_pair`` and ``n_state`` hold the running
    state; episode ``k`` uses the stream ``episode_key(base_key, k)``.
    Returns ``(status, total_steps)``.
    """
    n_states = starts.shape[0] - 1
    n_pairs = pair_state.shape[0]
    eps = np.empty(n_states)
    probs = np.empty(n_pairs)
    total = 0
    for j in range(n_episodes):
        k = k0 + j
        for s in range(n_states):
            eps[s] = (1.0 + n_state[s]) ** (-theta)
        greedy_probs(q, eps, starts, probs)
        pol_cdf = block_cdf(probs, starts)
        key = episode_key(base_key, k)
        xs, acts, ridx, rvals, n, absorbed_at, status = sample_path(
            pair_state,
            starts,
            trans_cdf,
            rew_start,
            rew_count,
            rew_cdf,
            rew_val,
            pol_cdf,
            False,
            mu0_cdf,
            key,
            mode,
            horizon,
            triangle,
            overrun,
            cap,
        )
        if status != OK:
            return status, total
        total += n
        g = backward_returns(rvals, gamma, n)
        first = first_visits(acts, n_pairs)
        for z in range(n_pairs):
            if first[z] >= 0:
                sum_returns[z] += g[first[z]]
                n_pair[z] += 1
                n_state[pair_state[z]] += 1
                q[z] = sum_returns[z] / n_pair[z]
    return OK, total


@njit
def robbins_monro_path(z0, base_key, steps, offset, noise_vals, noise_cdf, theta_kind, theta_param):
    """Z_{k+1} = (1 - theta_k) Z_k + theta_k zeta_{k+1}.

    ``theta_kind``: 0 -> 1/(k + offset), 1 -> 2^-(k + offset), 2 -> constant
    ``theta_param``. Noise draw ``k`` comes from stream ``k`` of ``base_key``.
    """
    out = np.empty(steps + 1)
    out[0] = z0
    z = z0
    for k in range(steps):
        if theta_kind == 0:
            th = 1.0 / (k + offset)
        elif theta_kind == 1:
            th = 0.5 ** (k + offset)
        else:
            th = theta_param
        u = uniform(base_key, k)
        zeta = noise_vals[pick(noise_cdf, 0, noise_cdf.shape[0], u)]
        z = (1.0 - th) * z + th * zeta
        out[k + 1] = z
    return out
