import json
from fractions import Fraction

import pytest

from fvmc import Mdp, RewardDist, data_path


@pytest.fixture
def cx_mdp():
    """One state e, action 0 pays 0, action 1 pays 1, gamma = 3/4."""
    return Mdp.load(data_path("counterexample.json"))


@pytest.fixture
def absorbing4():
    return Mdp.load(data_path("absorbing4.json"))


def two_state(gamma=Fraction(1, 2)):
    """Hand-made MDP with a stochastic branch and a two-point reward."""
    h = Fraction(1, 2)
    return Mdp(
        ["a", "b"],
        {"a": ["stay", "go"], "b": ["back"]},
        {
            ("a", "stay"): {"a": Fraction(1)},
            ("a", "go"): {"a": h, "b": h},
            ("b", "back"): {"a": Fraction(1)},
        },
        {
            ("a", "stay", "a"): RewardDist.dirac(Fraction(1)),
            ("a", "go", "b"): RewardDist(((Fraction(0), h), (Fraction(4), h))),
            ("b", "back", "a"): RewardDist.dirac(Fraction(-1)),
        },
        gamma,
    )


@pytest.fixture
def small_mdp():
    return two_state()


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path
