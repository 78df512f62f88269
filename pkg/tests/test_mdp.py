import json
from fractions import Fraction

import numpy as np
import pytest

from fvmc.mdp import Mdp, MdpError, RewardDist, StationaryPolicy, parse_number

from conftest import two_state


def test_parse_number():
    assert parse_number("3/4", True) == Fraction(3, 4)
    assert parse_number("3/4", False) == 0.75
    assert parse_number(0.5, True) == Fraction(1, 2)
    assert parse_number(2, False) == 2.0
    with pytest.raises((MdpError, ValueError)):
        parse_number("x", True)


def test_json_round_trip(small_mdp):
    doc = small_mdp.to_json()
    again = Mdp.from_json(json.dumps(doc))
    assert again.to_json() == doc
    assert again.exact and again.gamma == Fraction(1, 2)


def test_float_gamma_gives_float_mode(small_mdp):
    doc = small_mdp.to_json()
    doc["gamma"] = 0.5
    m = Mdp.from_json(doc)
    assert not m.exact
    assert m.P.dtype == float


def test_indexing(small_mdp):
    m = small_mdp
    assert m.pairs == [("a", "stay"), ("a", "go"), ("b", "back")]
    assert list(m.action_start) == [0, 2, 3]
    assert list(m.pair_state) == [0, 0, 1]
    assert m.state_slice(0) == slice(0, 2)
    assert m.pair_index[("b", "back")] == 2


def test_mean_rewards_and_matrix(small_mdp):
    m = small_mdp
    # g(a, go) = 1/2 * E[R | b] + 1/2 * 0 = 1/2 * 2
    assert list(m.r) == [1, 1, -1]
    assert m.P[1, 0] == Fraction(1, 2)
    assert m.r_max == 4  # largest |value| in any reward support


def test_missing_reward_is_zero(small_mdp):
    assert small_mdp.reward_dist("a", "go", "a").is_zero()


def test_row_sum_violation_is_listed():
    doc = two_state().to_json()
    doc["transitions"]["a|go"] = {"a": "1/2", "b": "499/1000"}
    m = Mdp.from_json(doc)
    found = m.violations()
    assert len(found) == 1 and "a|go" in found[0]
    with pytest.raises(MdpError):
        m.validate()


def test_float_row_tolerance():
    doc = two_state().to_json()
    doc["gamma"] = 0.5
    doc["transitions"]["a|go"] = {"a": 0.1 + 0.2, "b": 0.7}
    assert Mdp.from_json(doc).violations() == []
    doc["transitions"]["a|go"] = {"a": 0.3, "b": 0.699}
    assert Mdp.from_json(doc).violations()


@pytest.mark.parametrize(
    "mutate, text",
    [
        (lambda d: d.update(states=[]), "non-empty"),
        (lambda d: d.update(gamma="1"), "gamma"),
        (lambda d: d["actions"].update(b=[]), "no action"),
        (lambda d: d["transitions"].pop("b|back"), "missing transition"),
        (lambda d: d["transitions"].update({"a|go": {"zz": "1"}}), "unknown state"),
        (lambda d: d["rewards"].update({"a|nope|a": [["1", "1"]]}), "unknown triple"),
        (lambda d: d.update(triangle=["zz"]), "triangle"),
    ],
)
def test_structural_errors(mutate, text):
    doc = two_state().to_json()
    mutate(doc)
    with pytest.raises(MdpError, match=text):
        Mdp.from_json(doc)


def test_reward_dist_checks():
    with pytest.raises(MdpError):
        RewardDist(())
    with pytest.raises(MdpError):
        RewardDist(((1.0, -0.5), (2.0, 1.5)))
    d = RewardDist(((Fraction(2), Fraction(1, 4)), (Fraction(-2), Fraction(3, 4))))
    assert d.mean == -1 and d.total == 1 and not d.is_zero()


def test_conversions(small_mdp):
    f = small_mdp.as_float()
    assert not f.exact and f.gamma == 0.5
    back = f.as_exact()
    assert back.exact and back.gamma == Fraction(1, 2)
    assert small_mdp.with_gamma("1/3").gamma == Fraction(1, 3)


def test_policy_validation(small_mdp):
    m = small_mdp
    pi = StationaryPolicy.uniform(m)
    assert pi["a", "go"] == Fraction(1, 2)
    assert pi.is_positive()
    det = StationaryPolicy.deterministic(m, {"a": "go", "b": "back"})
    assert list(det.probs) == [0, 1, 1]
    assert not det.is_positive()
    with pytest.raises(MdpError):
        StationaryPolicy(m, np.array([Fraction(1, 2), Fraction(1, 3), Fraction(1)], dtype=object))
