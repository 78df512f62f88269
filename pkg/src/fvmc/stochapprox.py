"""Verification rigs: Robbins-Monro recursions, the abstract stochastic
approximation scheme with its domination bound, and the H contraction sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import _kernels as K
from .mdp import Mdp
from .randmdp import RandomMdpSpec, random_mdp
from .rng import as_key, base_key, uniform_py
from .solvers import contraction_sides, h_operator, policy_iteration, sup_norm

FORMAT_VERSION = 1
SWEEP_GAMMAS = tuple(Fraction(k, 20) for k in range(2, 10))  # 0.1 .. 0.45


# ---------------------------------------------------------------- schedules


@dataclass(frozen=True)
class Schedule:
    """A deterministic step-size rule k -> value.

    ``kind`` is ``"harmonic"`` (1/(j + offset)^power with j = k // block),
    ``"geometric"`` (ratio^(k + offset)), ``"constant"`` or ``"custom"``
    (``func`` supplies the values). The default geometric offset is 1, so
    2^-k is read with k counted from 1 and the first step is 1/2.
    """

    kind: str
    offset: float = 1.0
    power: float = 1.0
    ratio: float = 0.5
    value: float = 0.0
    func: Callable | None = None
    block: int = 1

    @classmethod
    def harmonic(cls, offset=1, power=1.0, block=1):
        if block < 1:
            raise ValueError("block must be >= 1")
        return cls("harmonic", offset=offset, power=power, block=block)

    @classmethod
    def geometric(cls, ratio=0.5, offset=1):
        return cls("geometric", ratio=ratio, offset=offset)

    @classmethod
    def constant(cls, value):
        return cls("constant", value=value)

    @classmethod
    def custom(cls, func):
        return cls("custom", func=func)

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "harmonic")
        if kind not in ("harmonic", "geometric", "constant"):
            raise ValueError(f"unknown schedule kind {kind!r}")
        return cls(
            kind,
            offset=float(d.get("offset", 1)),
            power=float(d.get("power", 1)),
            ratio=float(d.get("ratio", 0.5)),
            value=float(d.get("value", 0)),
            block=int(d.get("block", 1)),
        )

    def to_dict(self):
        if self.kind == "custom":
            return {"kind": "custom"}
        d = {"kind": self.kind}
        if self.kind == "harmonic":
            d.update(offset=self.offset, power=self.power, block=self.block)
        elif self.kind == "geometric":
            d.update(ratio=self.ratio, offset=self.offset)
        else:
            d["value"] = self.value
        return d

    def __call__(self, k):
        if self.kind == "harmonic":
            return 1.0 / (k // self.block + self.offset) ** self.power
        if self.kind == "geometric":
            return self.ratio ** (k + self.offset)
        if self.kind == "constant":
            return self.value
        return self.func(k)

    def values(self, steps):
        return np.array([self(k) for k in range(steps)], dtype=float)

    def properties(self):
        """``(sum diverges, squares summable, tends to 0)``; ``None`` if unknown."""
        if self.kind == "harmonic":
            return self.power <= 1, self.power > 0.5, self.power > 0
        if self.kind == "geometric":
            small = abs(self.ratio) < 1
            return (not small), small, small
        if self.kind == "constant":
            return self.value != 0, self.value == 0, self.value == 0
        return None, None, None


# -------------------------------------------------------------------- noise


@dataclass(frozen=True)
class FiniteNoise:
    """Bounded noise with finite support; the mean must be exactly zero."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise ValueError("noise needs matching non-empty values and probs")
        probs = [Fraction(p) for p in self.probs]
        values = [Fraction(v) for v in self.values]
        if any(p < 0 for p in probs) or sum(probs) != 1:
            raise ValueError("noise probabilities must be >= 0 and sum to 1")
        if sum(v * p for v, p in zip(values, probs)) != 0:
            raise ValueError("noise must have mean zero")

    @classmethod
    def symmetric(cls, amplitude):
        a = Fraction(amplitude)
        return cls((-a, a), (Fraction(1, 2), Fraction(1, 2)))

    @classmethod
    def zero(cls):
        return cls((Fraction(0),), (Fraction(1),))

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Fraction(str(v)) for v in d["values"]), tuple(Fraction(str(p)) for p in d["probs"]))

    def to_dict(self):
        return {"values": [str(Fraction(v)) for v in self.values], "probs": [str(Fraction(p)) for p in self.probs]}

    def arrays(self):
        vals = np.array([float(v) for v in self.values])
        cdf = np.cumsum([float(p) for p in self.probs])
        return vals, cdf

    @property
    def bound(self):
        return max(abs(float(v)) for v in self.values)

    @property
    def second_moment(self):
        return sum(Fraction(v) ** 2 * Fraction(p) for v, p in zip(self.values, self.probs))

    def draw(self, key, index):
        vals, cdf = self.arrays()
        return vals[K.pick(cdf, 0, cdf.shape[0], uniform_py(int(key), index))]


# ------------------------------------------------------------ Robbins-Monro


@dataclass(frozen=True)
class RmConfig:
    theta: Schedule
    noise: FiniteNoise
    z0: float = 1.0
    steps: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")


def _theta_kernel_args(theta: Schedule):
    if theta.kind == "harmonic" and theta.power == 1 and theta.block == 1:
        return 0, float(theta.offset), 0.0
    if theta.kind == "geometric" and theta.ratio == 0.5:
        return 1, float(theta.offset), 0.0
    if theta.kind == "constant":
        return 2, 0.0, float(theta.value)
    return None


def robbins_monro(config: RmConfig) -> np.ndarray:
    """Trajectory ``Z_0 .. Z_steps`` of Z_{k+1} = (1 - th_k) Z_k + th_k zeta_{k+1}.

    The noise ``zeta_{k+1}`` is draw ``k`` of the stream ``base_key(seed)``.
    Rules with a compiled form run in the kernel; others run in Python with
    the same arithmetic.
    """
    key = base_key(config.seed)
    vals, cdf = config.noise.arrays()
    args = _theta_kernel_args(config.theta)
    if args is not None:
        kind, offset, param = args
        for k in (0, max(config.steps - 1, 0)):
            th = config.theta(k)
            if not 0 <= th <= 1:
                raise ValueError(f"theta_{k} = {th} outside [0, 1]")
        return K.robbins_monro_path(float(config.z0), as_key(key), config.steps, offset, vals, cdf, kind, param)
    out = np.empty(config.steps + 1)
    z = float(config.z0)
    out[0] = z
    for k in range(config.steps):
        th = float(config.theta(k))
        if not 0 <= th <= 1:
            raise ValueError(f"theta_{k} = {th} outside [0, 1]")
        zeta = vals[K.pick(cdf, 0, cdf.shape[0], uniform_py(key, k))]
        z = (1.0 - th) * z + th * zeta
        out[k + 1] = z
    return out


def rm_mean_path(theta: Schedule, z0, steps):
    """Noise-free trajectory z0 * prod_{l<k} (1 - th_l), in exact arithmetic
    when ``z0`` and the rule values are rational."""
    z = z0
    out = [z]
    for k in range(steps):
        th = theta(k)
        exact = isinstance(z0, (int, Fraction))
        if exact and theta.kind == "harmonic" and theta.power == 1:
            th = Fraction(1) / (k // theta.block + Fraction(theta.offset))
        elif exact and theta.kind == "geometric":
            th = Fraction(theta.ratio) ** (k + int(theta.offset))
        z = (1 - th) * z
        out.append(z)
    return out


@dataclass
class RmReport:
    config: RmConfig
    seeds: list
    finals: list

    def to_dict(self, threshold=0.05):
        finals = [float(f) for f in self.finals]
        ok = sum(abs(f) < threshold for f in finals)
        diverge, square, vanish = self.config.theta.properties()
        return {
            "format_version": FORMAT_VERSION,
            "theta": self.config.theta.to_dict(),
            "noise": self.config.noise.to_dict(),
            "z0": self.config.z0,
            "steps": self.config.steps,
            "hypotheses": {"theta_sum_diverges": diverge, "theta_square_summable": square},
            "threshold": threshold,
            "seeds": [
                {"seed": s, "final": f, "below_threshold": abs(f) < threshold}
                for s, f in zip(self.seeds, finals)
            ],
            "below_threshold": ok,
            "max_abs_final": max((abs(f) for f in finals), default=0.0),
        }


def check_robbins_monro(config: RmConfig, seeds, keep_paths=False):
    """Run the recursion for each seed; returns ``(report, paths)``."""
    finals, paths = [], []
    for s in seeds:
        cfg = RmConfig(config.theta, config.noise, config.z0, config.steps, s)
        path = robbins_monro(cfg)
        finals.append(float(path[-1]))
        if keep_paths:
            paths.append(path)
    return RmReport(config, list(seeds), finals), paths


# ----------------------------------------------- abstract stochastic approx


class SyntheticContraction:
    """A map M(eta, f) over a finite set with fixed point ``f_star``.

    Subclasses implement :meth:`gap` returning ``M(eta, f) - f_star`` for
    ``f = f_star + phi`` as a float array that is never positive.
    """

    name = "abstract"
    rho = 0.0
    beta = 0.0

    def __init__(self, f_star):
        self.f_star = np.asarray(f_star, dtype=float)

    @property
    def size(self):
        return self.f_star.shape[0]

    def gap(self, eta, phi):  # pragma: no cover - interface
        raise NotImplementedError

    def apply(self, eta, f):
        f = np.asarray(f, dtype=float)
        return self.f_star + self.gap(eta, f - self.f_star)


class ConstantTarget(SyntheticContraction):
    """M(eta, f) = f_star."""

    name = "constant"

    def gap(self, eta, phi):
        return np.zeros_like(self.f_star)


class SupNormPull(SyntheticContraction):
    """M(eta, f) = f_star - rho ||f_star - f||_inf."""

    name = "sup_norm_pull"

    def __init__(self, f_star, rho=0.5):
        super().__init__(f_star)
        if not 0 < rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        self.rho = float(rho)

    def gap(self, eta, phi):
        return np.full_like(self.f_star, -self.rho * float(np.max(np.abs(phi))))


class HOperatorMap(SyntheticContraction):
    """M(eta, f) = H(eta, f) on an exact MDP, with ``f_star = Q*``.

    H is evaluated exactly, so ``M - f_star <= 0`` holds without roundoff;
    only the final difference is rounded to float (which keeps its sign).
    ``eta`` is used as the exploration level of every state.
    """

    name = "h_operator"

    def __init__(self, m: Mdp):
        if not m.exact:
            m = m.as_exact()
        self.mdp = m
        self.q_star = policy_iteration(m)[1]
        super().__init__([float(v) for v in self.q_star])
        g = m.gamma
        self.rho = float(g / (1 - g))
        self.beta = float(g / (1 - g) * max(1, 2 * sup_norm(self.q_star)))
        self._cache = {}

    def gap(self, eta, phi):
        f = self.f_star + phi
        eta = Fraction(eta).limit_denominator(10**12) if not isinstance(eta, Fraction) else eta
        winners = []
        for i in range(self.mdp.n_states):
            row = f[self.mdp.state_slice(i)]
            winners.append(tuple(np.flatnonzero(row == row.max()).tolist()))
        key = (eta, tuple(winners))
        hit = self._cache.get(key)
        if hit is None:
            # a proxy table with the same argmax sets as f
            proxy = np.zeros(self.mdp.n_pairs, dtype=object)
            for i, w in enumerate(winners):
                sl = self.mdp.state_slice(i)
                for j in w:
                    proxy[sl.start + j] = Fraction(1)
                for j in range(sl.stop - sl.start):
                    if j not in w:
                        proxy[sl.start + j] = Fraction(0)
            h = h_operator(self.mdp, eta, proxy)
            hit = np.array([float(a - b) for a, b in zip(h, self.q_star)])
            self._cache[key] = hit
        return hit


@dataclass
class SaTrace:
    map_name: str
    steps: int
    phi_norm: np.ndarray  # ||f_k - f_star||_inf, k = 0..steps
    w_norm: np.ndarray
    final_f: np.ndarray
    max_excess: float  # max over k, y of (f_k - f_star - W_k)(y)
    violations: int  # number of (k, y) with f_k - f_star > W_k
    flags: dict = field(default_factory=dict)

    @property
    def dominated(self):
        return self.violations == 0

    def to_dict(self):
        return {
            "map": self.map_name,
            "steps": self.steps,
            "final_error": float(self.phi_norm[-1]),
            "final_w": float(self.w_norm[-1]),
            "max_excess": float(self.max_excess),
            "violations": int(self.violations),
            "dominated": self.dominated,
            "flags": self.flags,
        }


def _hypothesis_flags(lam: Schedule, eta: Schedule, lam_vals, eta_vals):
    diverge, square, _ = lam.properties()
    _, _, eta_vanish = eta.properties()
    flags = {}
    if np.any((lam_vals < 0) | (lam_vals > 1)):
        flags["lambda_out_of_range"] = True
    if np.any((eta_vals < 0) | (eta_vals > 1)):
        flags["eta_out_of_range"] = True
    if diverge is False:
        flags["lambda_sum_finite"] = True
    if square is False:
        flags["lambda_squares_not_summable"] = True
    if eta_vanish is False:
        flags["eta_not_vanishing"] = True
    if None in (diverge, square, eta_vanish):
        flags["unverified_rule"] = True
    return flags


def abstract_sa(
    synth: SyntheticContraction,
    lam: Schedule,
    eta: Schedule,
    noise: FiniteNoise,
    f0,
    steps: int,
    seed: int = 0,
) -> SaTrace:
    """f_{k+1} = f_k + lam_k (M(eta_k, f_k) - f_k + xi_{k+1}), tracked through
    phi_k = f_k - f_star, alongside W_{k+1} = (1 - lam_k) W_k + lam_k xi_{k+1}
    with W_0 = phi_0.

    The update is evaluated as ``phi' = ((1-lam) phi + lam xi) + lam gap``
    and ``W' = (1-lam) W + lam xi`` with the same rounded factors. As
    ``gap <= 0`` and rounding is monotone, ``phi_k <= W_k`` then holds for
    the computed floats too, not only in exact arithmetic.

    Noise ``xi_{k+1}(y)`` is draw ``k * |Y| + y`` of ``base_key(seed)``.
    Hypothesis violations are flagged, never rejected.
    """
    n = synth.size
    f0 = np.asarray(f0, dtype=float)
    if f0.shape != (n,):
        raise ValueError(f"f0 must have {n} entries")
    phi = f0 - synth.f_star
    w = phi.copy()
    key = base_key(seed)
    vals, cdf = noise.arrays()
    lam_vals = lam.values(steps)
    eta_vals = eta.values(steps)
    flags = _hypothesis_flags(lam, eta, lam_vals, eta_vals)
    phi_norm = np.empty(steps + 1)
    w_norm = np.empty(steps + 1)
    phi_norm[0] = np.max(np.abs(phi))
    w_norm[0] = np.max(np.abs(w))
    max_excess = float(np.max(phi - w))
    violations = 0
    positive_gap = False
    xi = np.empty(n)
    for k in range(steps):
        for y in range(n):
            xi[y] = vals[K.pick(cdf, 0, cdf.shape[0], uniform_py(key, k * n + y))]
        lk = lam_vals[k]
        keep = 1.0 - lk
        gap = synth.gap(eta_vals[k], phi)
        if np.any(gap > 0):
            positive_gap = True
        noise_part = lk * xi
        phi = (keep * phi + noise_part) + lk * gap
        w = keep * w + noise_part
        excess = phi - w
        max_excess = max(max_excess, float(np.max(excess)))
        violations += int(np.count_nonzero(excess > 0))
        phi_norm[k + 1] = np.max(np.abs(phi))
        w_norm[k + 1] = np.max(np.abs(w))
    if positive_gap:
        flags["map_exceeds_target"] = True
    return SaTrace(synth.name, steps, phi_norm, w_norm, synth.f_star + phi, max_excess, violations, flags)


def shipped_maps(seed=0):
    """The three reference maps: constant target, sup-norm pull and the real
    H on a small random MDP with gamma < 1/2."""
    f_star = np.array([1.0, -0.5, 2.0, 0.25])
    spec = RandomMdpSpec(n_states=3, max_actions=3, gamma=Fraction(2, 5), seed=seed)
    return [ConstantTarget(f_star), SupNormPull(f_star, 0.5), HOperatorMap(random_mdp(spec))]


# -------------------------------------------------------- contraction sweep


@dataclass
class SweepRecord:
    index: int
    gamma: Fraction
    n_states: int
    n_pairs: int
    lhs: Fraction
    rhs: Fraction
    dominance_gap: Fraction

    @property
    def norm_excess(self):
        return self.lhs - self.rhs

    def to_dict(self):
        return {
            "index": self.index,
            "gamma": str(self.gamma),
            "n_states": self.n_states,
            "n_pairs": self.n_pairs,
            "lhs": float(self.lhs),
            "rhs": float(self.rhs),
            "norm_excess": float(self.norm_excess),
            "dominance_gap": float(self.dominance_gap),
        }


@dataclass
class SweepReport:
    seed: int
    records: list

    @property
    def max_norm_excess(self):
        return max((r.norm_excess for r in self.records), default=Fraction(0))

    @property
    def max_dominance_gap(self):
        return max((r.dominance_gap for r in self.records), default=Fraction(0))

    def violations(self, tol=1e-10):
        return [r for r in self.records if r.norm_excess > tol or r.dominance_gap > tol]

    def to_dict(self, tol=1e-10, include_records=False):
        d = {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "count": len(self.records),
            "tolerance": tol,
            "max_norm_excess": float(self.max_norm_excess),
            "max_dominance_gap": float(self.max_dominance_gap),
            "violations": len(self.violations(tol)),
        }
        if include_records:
            d["records"] = [r.to_dict() for r in self.records]
        return d


def _random_rational(rng, low, high, denominator=16):
    lo, hi = int(np.floor(low * denominator)), int(np.ceil(high * denominator))
    return Fraction(int(rng.integers(lo, hi + 1)), denominator)


def contraction_sweep(seed: int, count: int, gammas=SWEEP_GAMMAS) -> SweepReport:
    """Check ||H(eps, q) - Q*|| <= gamma/(1-gamma)(...) and H(eps, q) <= Q*
    on ``count`` random tuples, all in exact arithmetic.

    Tuple ``i`` draws from ``default_rng([seed, i])``: an MDP with at most 5
    states and 4 actions per state, gamma from ``gammas``, q in a box around
    Q* and eps per state in [0, 1].
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    gammas = [Fraction(g) for g in gammas]
    records = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        gamma = gammas[int(rng.integers(len(gammas)))]
        spec = RandomMdpSpec(
            n_states=int(rng.integers(1, 6)),
            max_actions=4,
            gamma=gamma,
            branching=int(rng.integers(1, 4)),
            reward_low=-1,
            reward_high=1,
            seed=int(rng.integers(2**31)),
        )
        m = random_mdp(spec)
        q_star = policy_iteration(m)[1]
        box = Fraction(int(rng.integers(1, 9)), 4)
        q = np.array([v + _random_rational(rng, -box, box) for v in q_star], dtype=object)
        if rng.random() < 0.2:
            eps = [Fraction(0)] * m.n_states
        else:
            eps = [Fraction(int(rng.integers(0, 17)), 16) for _ in range(m.n_states)]
        lhs, rhs, gap = contraction_sides(m, eps, q, q_star)
        records.append(SweepRecord(i, gamma, m.n_states, m.n_pairs, lhs, rhs, gap))
    return SweepReport(seed, records)
