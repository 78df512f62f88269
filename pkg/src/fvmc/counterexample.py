"""Exact simulation of the one-state, two-action divergence construction.

The MDP has a single state ``e``; action 0 pays 0, action 1 pays 1, and both
loop back to ``e``. With eps = 0 and the zone-driven start law and learning
rates below, the greedy policy keeps flipping between "always 0" (value 0)
and "always 1" (value 1/(1-gamma)) whenever gamma > 1/2.

Q-values are tracked as ``(u, v) = (Q(e, 0), Q(e, 1))``; u stays rational
and v stays in Q(sqrt 2) \\ Q, so the two never tie.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction

from .extrational import ExtendedRational
from .mdp import Mdp, RewardDist

Z1, Z2, Z3, Z4 = "Z1", "Z2", "Z3", "Z4"
OUTSIDE = "outside"
ZONES = (Z1, Z2, Z3, Z4)
SUCCESSOR = {Z1: Z2, Z2: Z3, Z3: Z4, Z4: Z1}


class ZoneError(RuntimeError):
    """The iterate left every zone, or a zone was never left."""


def counterexample_mdp(gamma=Fraction(3, 4)):
    """The single-state MDP in exact arithmetic."""
    one = Fraction(1)
    return Mdp(
        ["e"],
        {"e": ["0", "1"]},
        {("e", "0"): {"e": one}, ("e", "1"): {"e": one}},
        {
            ("e", "0", "e"): RewardDist.dirac(Fraction(0)),
            ("e", "1", "e"): RewardDist.dirac(one),
        },
        Fraction(gamma),
    )


@dataclass(frozen=True)
class Bands:
    """The four thresholds of the zone definitions for a given gamma."""

    low: Fraction  # (3 - 2g) / (4 (1 - g))
    mid: Fraction  # 1 / (2 (1 - g))
    high: Fraction  # (1 + 2g) / (4 (1 - g))
    top: Fraction  # g / (1 - g)

    @classmethod
    def for_gamma(cls, gamma):
        g = Fraction(gamma)
        return cls(
            (3 - 2 * g) / (4 * (1 - g)),
            1 / (2 * (1 - g)),
            (1 + 2 * g) / (4 * (1 - g)),
            g / (1 - g),
        )


def zone_of(u, v, gamma):
    """Zone containing ``(u, v)``, or ``"outside"``."""
    bands = Bands.for_gamma(gamma)
    upper_band = bands.mid < v < bands.high
    lower_band = bands.low < v < bands.mid
    rising = v > u > 1
    falling = v < u < bands.top
    if rising and upper_band:
        return Z1
    if falling and upper_band:
        return Z2
    if falling and lower_band:
        return Z3
    if rising and lower_band:
        return Z4
    return OUTSIDE


def _as_ext(value):
    if isinstance(value, ExtendedRational):
        return value
    return ExtendedRational(Fraction(value))


@dataclass(frozen=True)
class CxParams:
    gamma: Fraction = Fraction(3, 4)
    q: Fraction = Fraction(1, 10)
    u0: ExtendedRational = ExtendedRational(Fraction(9, 4))
    v0: ExtendedRational = ExtendedRational(Fraction(9, 4), Fraction(1, 100))

    def __post_init__(self):
        object.__setattr__(self, "u0", _as_ext(self.u0))
        object.__setattr__(self, "v0", _as_ext(self.v0))
        if not isinstance(self.gamma, (int, Fraction)) or not isinstance(self.q, (int, Fraction)):
            raise ValueError("gamma and q must be rational")
        gamma = Fraction(self.gamma)
        q = Fraction(self.q)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "q", q)
        if not Fraction(1, 2) < gamma < 1:
            raise ValueError(f"gamma must lie in (1/2, 1), got {gamma}")
        bound = gamma / 2 - Fraction(1, 4)
        if not 0 < q < bound:
            raise ValueError(f"q must lie strictly inside (0, {bound}), got {q}")
        if not self.u0.is_rational():
            raise ValueError("u0 must be rational")
        if self.v0.is_rational():
            raise ValueError("v0 must be irrational")
        if zone_of(self.u0, self.v0, gamma) != Z1:
            raise ValueError("(u0, v0) must lie in zone Z1")


@dataclass(frozen=True)
class CxState:
    u: ExtendedRational
    v: ExtendedRational
    L0: int = 0
    L1: int = 0
    k: int = 0
    zone: str = Z1

    @classmethod
    def initial(cls, params: CxParams):
        return cls(params.u0, params.v0, 0, 0, 0, zone_of(params.u0, params.v0, params.gamma))


def policy_value(zone, gamma):
    """V(e) of the greedy policy in a zone: 1/(1-gamma) if action 1 leads."""
    gamma = Fraction(gamma)
    return 1 / (1 - gamma) if zone in (Z1, Z4) else Fraction(0)


def learning_rate(params: CxParams, count):
    """alpha = q / (1 + L) with L the number of earlier updates of the action."""
    return params.q / (1 + count)


def cx_step(state: CxState, params: CxParams) -> CxState:
    """Apply the zone's affine update exactly and recompute the zone."""
    g = params.gamma
    u, v, L0, L1 = state.u, state.v, state.L0, state.L1
    zone = state.zone
    if zone == Z1:
        u = u + learning_rate(params, L0) * (g / (1 - g) - u)
        L0 += 1
    elif zone == Z2:
        v = v - learning_rate(params, L1) * (v - 1)
        L1 += 1
    elif zone == Z3:
        u = u - learning_rate(params, L0) * u
        L0 += 1
    elif zone == Z4:
        v = v + learning_rate(params, L1) * (1 / (1 - g) - v)
        L1 += 1
    else:
        raise ZoneError(f"state at step {state.k} lies outside every zone")
    new_zone = zone_of(u, v, g)
    if new_zone not in (zone, SUCCESSOR[zone]):
        raise ZoneError(f"step {state.k}: moved from {zone} to {new_zone}")
    return CxState(u, v, L0, L1, state.k + 1, new_zone)


@dataclass
class CxTrace:
    params: CxParams
    states: list = field(default_factory=list)
    transitions: list = field(default_factory=list)  # (k, from, to)
    alpha_sum: list = field(default_factory=lambda: [Fraction(0), Fraction(0)])
    alpha_sq_sum: list = field(default_factory=lambda: [Fraction(0), Fraction(0)])
    max_bits: int = 0
    stuck: bool = False

    @property
    def final(self):
        return self.states[-1]

    @property
    def cycles(self):
        """Completed Z1 -> Z2 -> Z3 -> Z4 -> Z1 tours."""
        return sum(1 for _, src, dst in self.transitions if src == Z4 and dst == Z1)

    def values(self):
        """V of the greedy policy at every recorded k."""
        return [policy_value(s.zone, self.params.gamma) for s in self.states]

    def zone_sequence(self):
        seq = [self.states[0].zone]
        seq.extend(dst for _, _, dst in self.transitions)
        return seq

    def audit(self):
        """Exact check of the schedule sums against q H(L) and q^2 H2(L)."""
        q = self.params.q
        s = self.final
        out = {}
        for a, count in ((0, s.L0), (1, s.L1)):
            h1 = sum((Fraction(1, 1 + l) for l in range(count)), Fraction(0))
            h2 = sum((Fraction(1, (1 + l) ** 2) for l in range(count)), Fraction(0))
            out[a] = {
                "updates": count,
                "alpha_sum": self.alpha_sum[a],
                "alpha_sq_sum": self.alpha_sq_sum[a],
                "alpha_sum_ok": self.alpha_sum[a] == q * h1,
                "alpha_sq_sum_ok": self.alpha_sq_sum[a] == q * q * h2,
            }
        return out

    def csv_rows(self):
        yield ["k", "zone", "u", "v", "L0", "L1", "V_policy"]
        for s in self.states:
            v_pi = policy_value(s.zone, self.params.gamma)
            yield [s.k, s.zone, repr(float(s.u)), repr(float(s.v)), s.L0, s.L1, str(v_pi)]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.csv_rows())

    def summary(self):
        s = self.final
        audit = self.audit()
        return {
            "format_version": 1,
            "gamma": str(self.params.gamma),
            "q": str(self.params.q),
            "u0": str(self.params.u0),
            "v0": str(self.params.v0),
            "steps": s.k,
            "cycles": self.cycles,
            "final": {"u": str(s.u), "v": str(s.v), "L0": s.L0, "L1": s.L1, "zone": s.zone},
            "transitions": [[k, a, b] for k, a, b in self.transitions],
            "audit": {
                str(a): {
                    "updates": r["updates"],
                    "alpha_sum": str(r["alpha_sum"]),
                    "alpha_sq_sum": str(r["alpha_sq_sum"]),
                    "alpha_sum_ok": r["alpha_sum_ok"],
                    "alpha_sq_sum_ok": r["alpha_sq_sum_ok"],
                }
                for a, r in audit.items()
            },
            "max_bits": self.max_bits,
            "stuck": self.stuck,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def run_counterexample(params: CxParams, max_steps: int, stall_limit=None) -> CxTrace:
    """Iterate :func:`cx_step` up to ``max_steps`` times.

    Raises :class:`ZoneError` if the iterate ever leaves the zones or moves
    out of cyclic order. If ``stall_limit`` is given and a single zone is
    occupied for more than that many consecutive steps, the run stops with
    ``trace.stuck = True``.
    """
    if max_steps < 0:
        raise ValueError("max_steps must be non-negative")
    state = CxState.initial(params)
    trace = CxTrace(params, [state])
    trace.max_bits = max(state.u.bit_size(), state.v.bit_size())
    dwell = 0
    for _ in range(max_steps):
        action = 0 if state.zone in (Z1, Z3) else 1
        count = state.L0 if action == 0 else state.L1
        alpha = learning_rate(params, count)
        trace.alpha_sum[action] += alpha
        trace.alpha_sq_sum[action] += alpha * alpha
        nxt = cx_step(state, params)
        if not nxt.u.is_rational() or nxt.v.is_rational():
            raise ZoneError(f"rationality pattern broken at step {nxt.k}")
        if nxt.zone != state.zone:
            trace.transitions.append((state.k + 1, state.zone, nxt.zone))
            dwell = 0
        else:
            dwell += 1
            if stall_limit is not None and dwell > stall_limit:
                trace.stuck = True
                trace.states.append(nxt)
                break
        trace.max_bits = max(trace.max_bits, nxt.u.bit_size(), nxt.v.bit_size())
        trace.states.append(nxt)
        state = nxt
    return trace
