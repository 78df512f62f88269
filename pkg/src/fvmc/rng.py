"""Counter-based random streams.

Every episode draws from its own stream keyed by ``(master_seed, replicate,
episode)``; draw ``i`` of a stream is ``splitmix64(key + (i + 1) * GOLDEN)``.
Nothing is carried between episodes, so episode ``k + 1`` is independent of
how many numbers episode ``k`` consumed, and streams can be generated in any
order or in parallel.

The compiled and interpreted variants produce bit-identical output.
"""

from dataclasses import dataclass

import numpy as np

from ._accel import ENABLED, njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_REPLICATE_SALT = 0xD1B54A32D192ED03
_EPISODE_SALT = 0x8CB92BA72F3D8DD7


def mix64_py(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def uniform_py(key, i):
    z = mix64_py(key + ((i + 1) * GOLDEN & MASK64))
    return (z >> 11) * (1.0 / 9007199254740992.0)


def episode_key_py(base, episode):
    return mix64_py(base ^ ((episode * _EPISODE_SALT) & MASK64))


if ENABLED:

    @njit
    def mix64(z):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
        return z ^ (z >> np.uint64(31))

    @njit
    def uniform(key, i):
        z = mix64(key + np.uint64(i + 1) * np.uint64(GOLDEN))
        return np.float64(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)

    @njit
    def episode_key(base, episode):
        return mix64(base ^ (np.uint64(episode) * np.uint64(_EPISODE_SALT)))

    def as_key(value):
        return np.uint64(value)

else:
    mix64 = mix64_py
    uniform = uniform_py
    episode_key = episode_key_py

    def as_key(value):
        return int(value)


def base_key(master_seed, replicate=0):
    """Key of a replicate: episodes derive their own keys from it."""
    s = mix64_py(int(master_seed) & MASK64)
    return mix64_py(s ^ ((int(replicate) * _REPLICATE_SALT) & MASK64))


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one episode stream: master seed plus (replicate, episode)."""

    master_seed: int
    replicate: int = 0
    episode: int = 0

    def key(self):
        return episode_key_py(base_key(self.master_seed, self.replicate), self.episode)

    def with_episode(self, episode):
        return SeedSpec(self.master_seed, self.replicate, episode)


class Stream:
    """Sequential view of one counter-based stream (Python side only)."""

    def __init__(self, key):
        self.key = int(key)
        self.counter = 0

    @classmethod
    def from_seed(cls, seed):
        return cls(seed.key())

    def random(self):
        u = uniform_py(self.key, self.counter)
        self.counter += 1
        return u

    def randoms(self, n):
        return np.array([self.random() for _ in range(n)])

    def choice_index(self, probs):
        """Inverse-CDF draw over ``probs`` in stored order."""
        return pick_index(np.cumsum(np.asarray(probs, dtype=float)), self.random())


def pick_index(cdf, u):
    # strict comparison never lands on a zero-probability entry
    for i in range(len(cdf)):
        if u < cdf[i]:
            return i
    return last_positive(cdf)


def last_positive(cdf):
    prev_i = len(cdf) - 1
    for i in range(len(cdf) - 1, -1, -1):
        lower = cdf[i - 1] if i > 0 else 0.0
        if cdf[i] > lower:
            return i
    return prev_i
