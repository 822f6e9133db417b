"""Deterministic randomness and small numerical utilities.

Randomness contract
-------------------
Every stochastic operation takes an explicit :class:`RngState`, a frozen
(seed, stream) pair. Equal pairs reproduce identical draw sequences across
runs and platforms for a fixed numpy version. The underlying bit generator
is Philox (4x64 counter-based, Salmon et al. 2011) keyed by the pair, so
distinct streams are statistically independent by construction. Gaussians
come from numpy's ziggurat sampler on that pinned generator; uniforms are
53-bit doubles in [0, 1).

Streams for unrelated purposes (data, init, attack noise, holdout split)
are derived with :meth:`RngState.child`, which feeds ``256*stream + k + 1``
through splitmix64. splitmix64 is a bijection on 64-bit words, so derived
streams never collide for k < 255.

All arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

from .errors import InputError

_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(x: int) -> int:
    """One splitmix64 mixing step; bijective on 64-bit unsigned ints."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


@dataclass(frozen=True)
class RngState:
    """Value identifying a random stream; never holds mutable generator state."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream <= _MASK64):
            raise InputError("seed and stream must fit in 64 bits")

    def child(self, k: int) -> "RngState":
        """Derived stream for purpose index k (0 <= k < 255)."""
        if not 0 <= k < 255:
            raise InputError("child index out of range")
        return RngState(self.seed, splitmix64((256 * self.stream + k + 1) & _MASK64))

    def draws(self) -> "Draws":
        """Fresh stateful draw source positioned at the start of this stream."""
        return Draws(self)


class Draws:
    """Sequential consumer of one stream. Create via RngState.draws()."""

    def __init__(self, state: RngState):
        key = np.array([state.seed, state.stream], dtype=np.uint64)
        self._gen = Generator(Philox(key=key))

    def uniform(self, shape=None) -> np.ndarray:
        return self._gen.random(shape)

    def normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def check_probability(value: float, what: str = "probability") -> float:
    if not (0.0 <= value <= 1.0):
        raise InputError(f"{what} must lie in [0, 1], got {value}")
    return float(value)


def std_normal_cdf(z: float) -> float:
    """Standard normal CDF via the complementary error function.

    Phi(z) = erfc(-z / sqrt(2)) / 2. libm's erfc is accurate to a few ulp,
    well inside the 1e-12 absolute error this package relies on.
    """
    z = float(z)
    if not math.isfinite(z):
        raise InputError("std_normal_cdf requires finite input")
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def sample_gaussian(mean: float, sigma: float, rng: RngState, n: int = 1) -> np.ndarray:
    """n independent draws from N(mean, sigma^2) as a float64 vector."""
    if sigma <= 0:
        raise InputError("sigma must be positive")
    if n < 1:
        raise InputError("n must be at least 1")
    return mean + sigma * rng.draws().normal(n)


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise InputError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * h)
    return grad
