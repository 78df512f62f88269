"""First-visit Monte-Carlo control on finite discounted MDPs.

Exact solvers, episode sampling, the first-visit and general control
schemes, the divergence construction and stochastic-approximation rigs.
"""

__version__ = "0.1.0"

from .mdp import Mdp, MdpError, RewardDist, StationaryPolicy  # noqa: E402
from .solvers import (  # noqa: E402
    brute_force_optimal,
    epsilon_greedy,
    h_operator,
    optimal_q,
    policy_evaluation,
    policy_iteration,
    value_iteration,
)

__all__ = [
    "Mdp",
    "MdpError",
    "RewardDist",
    "StationaryPolicy",
    "brute_force_optimal",
    "epsilon_greedy",
    "h_operator",
    "optimal_q",
    "policy_evaluation",
    "policy_iteration",
    "value_iteration",
]


def data_path(name):
    """Path of a bundled file, e.g. ``data_path("counterexample.json")``."""
    from importlib.resources import files

    return files("fvmc") / "data" / name


def schema_path(name):
    """Path of a bundled JSON schema, e.g. ``schema_path("solve")``."""
    from importlib.resources import files

    return files("fvmc") / "schemas" / f"{name}.schema.json"
