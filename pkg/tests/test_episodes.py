from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fvmc.episodes import (
    Absorbed,
    AbsorbingSpec,
    ContractError,
    Start,
    Tail,
    Truncated,
    check_absorbing,
    discounted_return,
    first_visit,
    horizon_for_tolerance,
    sample_episode,
)
from fvmc.mdp import Mdp, RewardDist, StationaryPolicy
from fvmc.randmdp import RandomMdpSpec, random_mdp
from fvmc.rng import SeedSpec, uniform_py


def reference_truncated(m, pi, start_probs, key, horizon):
    """Plain-Python sampler following the documented draw order: one draw for
    the start state, then per step action, next state, reward."""

    def draw(probs, c):
        u = uniform_py(key, c)
        acc = 0.0
        for i, p in enumerate(probs):
            acc += float(p)
            if u < acc:
                return i
        return max(i for i, p in enumerate(probs) if p > 0)

    c = 0
    x = draw(start_probs, c)
    c += 1
    xs, zs, rs = [x], [], []
    for _ in range(horizon):
        sl = m.state_slice(x)
        j = draw(pi.probs[sl], c)
        c += 1
        z = sl.start + j
        xn = draw(m.P[z], c)
        c += 1
        dist = m.reward_dist(*m.pairs[z], m.states[xn])
        k = draw([p for _, p in dist.support], c)
        c += 1
        zs.append(z)
        rs.append(float(dist.support[k][0]))
        xs.append(xn)
        x = xn
    return xs, zs, rs


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_sampler_matches_reference(mdp_seed, master):
    m = random_mdp(RandomMdpSpec(n_states=3, max_actions=3, seed=mdp_seed), exact=False)
    pi = StationaryPolicy.uniform(m)
    start = Start.uniform_states(m)
    seed = SeedSpec(master)
    e = sample_episode(m, pi, start, seed, Truncated(12))
    xs, zs, rs = reference_truncated(m, pi, start.probs, seed.key(), 12)
    assert list(e.states) == xs and list(e.actions) == zs and e.rewards == rs


def test_exact_mode_rewards_are_fractions(small_mdp):
    e = sample_episode(small_mdp, StationaryPolicy.uniform(small_mdp), Start.uniform_states(small_mdp), SeedSpec(1), Truncated(30))
    assert all(isinstance(r, Fraction) for r in e.rewards)
    ef = sample_episode(small_mdp.as_float(), StationaryPolicy.uniform(small_mdp.as_float()),
                        Start.uniform_states(small_mdp.as_float()), SeedSpec(1), Truncated(30))
    assert [float(r) for r in e.rewards] == ef.rewards
    assert list(e.states) == list(ef.states)


def test_pair_start_uses_pair(small_mdp):
    m = small_mdp
    for s in range(20):
        e = sample_episode(m, StationaryPolicy.uniform(m), Start.at(m, "a", "go"), SeedSpec(s), Truncated(3))
        assert m.pairs[e.actions[0]] == ("a", "go")


def test_reproducible_and_seed_sensitive(small_mdp):
    m = small_mdp.as_float()
    args = (m, StationaryPolicy.uniform(m), Start.uniform_states(m))
    a = sample_episode(*args, SeedSpec(5), Truncated(50))
    b = sample_episode(*args, SeedSpec(5), Truncated(50))
    c = sample_episode(*args, SeedSpec(6), Truncated(50))
    assert list(a.actions) == list(b.actions) and a.rewards == b.rewards
    assert list(a.actions) != list(c.actions)


def test_truncated_zero_length(small_mdp):
    e = sample_episode(small_mdp, StationaryPolicy.uniform(small_mdp), Start.uniform_states(small_mdp), SeedSpec(0), Truncated(0))
    assert len(e) == 0 and len(e.states) == 1


def test_tail_mode_keeps_horizon_after_last_first_visit(small_mdp):
    m = small_mdp.as_float()
    for s in range(30):
        e = sample_episode(m, StationaryPolicy.uniform(m), Start.uniform_states(m), SeedSpec(s), Tail(7))
        last_new = max(e.first_visit_table().values())
        assert len(e) - last_new == 7


def test_absorbed_mode(absorbing4):
    m = absorbing4
    spec = AbsorbingSpec(m.triangle)
    pi = StationaryPolicy.uniform(m)
    for s in range(30):
        e = sample_episode(m, pi, Start.uniform_states(m), SeedSpec(s), Absorbed(spec))
        assert m.states[e.states[-1]] in spec.triangle
        assert all(m.states[x] not in spec.triangle for x in e.states[:-1])
        assert e.absorbed_at == len(e)
        e2 = sample_episode(m, pi, Start.uniform_states(m), SeedSpec(s), Absorbed(spec, overrun=2))
        # the common prefix is identical, the overrun pays nothing
        n = len(e)
        assert list(e2.actions[:n]) == list(e.actions) and e2.rewards[:n] == e.rewards
        assert len(e2) == n + 2 and all(r == 0 for r in e2.rewards[n:])


def test_absorbed_requires_assumption(small_mdp):
    with pytest.raises(ContractError):
        sample_episode(small_mdp, StationaryPolicy.uniform(small_mdp), Start.uniform_states(small_mdp),
                       SeedSpec(0), Absorbed(AbsorbingSpec(["b"])))


def test_unreachable_triangle_rejected():
    trapped = Mdp(
        ["e", "t"],
        {"e": ["0"], "t": ["0"]},
        {("e", "0"): {"e": Fraction(1)}, ("t", "0"): {"t": Fraction(1)}},
        {},
        Fraction(1, 2),
    )
    with pytest.raises(ContractError):
        sample_episode(trapped, StationaryPolicy.uniform(trapped), Start.at(trapped, "e"), SeedSpec(0),
                       Absorbed(AbsorbingSpec(["t"])))


def test_cap_exceeded(absorbing4):
    m = absorbing4
    spec = AbsorbingSpec(m.triangle)
    with pytest.raises(ContractError, match="cap"):
        sample_episode(m, StationaryPolicy.uniform(m), Start.at(m, "s0"), SeedSpec(0), Absorbed(spec, cap=0))


def test_discounted_return_matches_direct_sum(small_mdp):
    m = small_mdp
    e = sample_episode(m, StationaryPolicy.uniform(m), Start.uniform_states(m), SeedSpec(3), Truncated(15))
    g = m.gamma
    for t in (0, 4, 15):
        direct = sum((g**s * e.rewards[t + s] for s in range(len(e) - t)), Fraction(0))
        assert discounted_return(e, t) == direct
        assert e.returns()[t] == direct
    with pytest.raises(IndexError):
        discounted_return(e, 16)


def test_first_visit(small_mdp):
    m = small_mdp
    e = sample_episode(m, StationaryPolicy.uniform(m), Start.uniform_states(m), SeedSpec(8), Truncated(40))
    for x, a in m.pairs:
        t = first_visit(e, x, a)
        visits = [i for i, z in enumerate(e.actions) if m.pairs[z] == (x, a)]
        assert t == (visits[0] if visits else None)
    assert first_visit(e, "zz", "q") is None


def test_episode_csv(tmp_path, small_mdp):
    e = sample_episode(small_mdp, StationaryPolicy.uniform(small_mdp), Start.uniform_states(small_mdp), SeedSpec(0), Truncated(4))
    p = tmp_path / "e.csv"
    e.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,x,a,r" and len(lines) == 5


def test_check_absorbing_clauses(absorbing4):
    assert check_absorbing(absorbing4, AbsorbingSpec(absorbing4.triangle)).ok
    doc = absorbing4.to_json()
    doc["rewards"]["s3|a0|s3"] = [["1", "1"]]
    doc["transitions"]["s3|a1"] = {"s0": "1/2", "s3": "1/2"}
    bad = Mdp.from_json(doc)
    rep = check_absorbing(bad, AbsorbingSpec(["s3"]))
    assert rep.zero_rewards == [("s3", "a0", "s3")]
    assert rep.closure == [("s3", "a1")]
    assert not rep.ok and "not closed" in rep.summary()
    island = Mdp(
        ["u", "t"],
        {"u": ["0"], "t": ["0"]},
        {("u", "0"): {"u": Fraction(1)}, ("t", "0"): {"t": Fraction(1)}},
        {("u", "0", "u"): RewardDist.dirac(Fraction(1))},
        Fraction(1, 2),
    )
    assert check_absorbing(island, AbsorbingSpec(["t"])).unreachable == ["u"]


@pytest.mark.parametrize(
    "gamma, r_max, tol",
    [(0.5, 1.0, 1e-6), (0.9, 2.0, 1e-9), (0.1, 5.0, 1e-3), (0.99, 1.0, 1e-4)],
)
def test_horizon_for_tolerance_is_minimal(gamma, r_max, tol):
    t = horizon_for_tolerance(gamma, r_max, tol)
    assert gamma**t * r_max / (1 - gamma) <= tol
    assert t == 0 or gamma ** (t - 1) * r_max / (1 - gamma) > tol


def test_horizon_edge_cases():
    assert horizon_for_tolerance(0.5, 1.0, 1e-6) == 21
    assert horizon_for_tolerance(0.5, 1e-9, 1e-6) == 0
    assert horizon_for_tolerance(0.0, 1.0, 1e-6) == 1
    with pytest.raises(ValueError):
        horizon_for_tolerance(1.0, 1.0, 1e-6)
