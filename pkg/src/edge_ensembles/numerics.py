"""Numerical primitives shared by the models, network and latency modules.

Arrays are plain ``float64`` numpy arrays. All randomness flows through
:class:`RngStream`, whose state is fully described by ``(seed, position)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import ndtri

CE_FLOOR = 1e-12

_TWO53 = float(2**53)


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0) or not np.isfinite(self.p):
            raise ValueError(f"Bernoulli parameter must lie in [0, 1], got {self.p}")


@dataclass(frozen=True)
class Rayleigh:
    sigma: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0.0) or not np.isfinite(self.sigma):
            raise ValueError(f"Rayleigh scale must be positive, got {self.sigma}")


@dataclass(frozen=True)
class Uniform:
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not (self.high > self.low):
            raise ValueError(f"empty uniform interval [{self.low}, {self.high})")


@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not (self.std >= 0.0):
            raise ValueError(f"normal std must be nonnegative, got {self.std}")


Distribution = Union[Bernoulli, Rayleigh, Uniform, Normal]


class RngStream:
    """Seedable uniform source with an explicit draw counter.

    Every draw consumes exactly one 64-bit PCG64 output, so the stream can be
    reconstructed at any ``position`` by advancing the generator.
    """

    def __init__(self, seed: int, position: int = 0):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if position < 0:
            raise ValueError("position must be nonnegative")
        self.seed = int(seed)
        bitgen = np.random.PCG64(self.seed)
        if position:
            bitgen.advance(position)
        self._gen = np.random.Generator(bitgen)
        self.position = int(position)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, position={self.position})"

    def spawn(self, offset: int) -> "RngStream":
        """Independent stream seeded ``seed + offset`` (per-partition schedule)."""
        return RngStream((self.seed + offset) % 2**64)

    def uniform(self, count: int) -> np.ndarray:
        """``count`` draws on [0, 1)."""
        if count < 0:
            raise ValueError("count must be nonnegative")
        out = self._gen.random(count)
        self.position += count
        return out

    def open_uniform(self, count: int) -> np.ndarray:
        """Draws on the open interval (0, 1), one PCG64 output each."""
        u = self.uniform(count)
        return (np.floor(u * _TWO53) + 0.5) / _TWO53

    def draws(self, dist: Distribution, count: int) -> np.ndarray:
        return rng_draws(self, dist, count)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        size = int(np.prod(shape))
        return rng_draws(self, Normal(mean, std), size).reshape(shape)


def rng_draws(stream: RngStream, dist: Distribution, count: int) -> np.ndarray:
    """Draw ``count`` variates from ``dist``, one uniform per variate."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    if isinstance(dist, Bernoulli):
        return (stream.uniform(count) < dist.p).astype(np.float64)
    if isinstance(dist, Rayleigh):
        u = stream.open_uniform(count)
        return dist.sigma * np.sqrt(-2.0 * np.log(u))
    if isinstance(dist, Uniform):
        return dist.low + (dist.high - dist.low) * stream.uniform(count)
    if isinstance(dist, Normal):
        return dist.mean + dist.std * ndtri(stream.open_uniform(count))
    raise TypeError(f"unsupported distribution {dist!r}")


def rayleigh_cdf(x, sigma: float = 1.0):
    """F(x) = 1 - exp(-x^2 / (2 sigma^2)) for x > 0, else 0."""
    x = np.asarray(x, dtype=np.float64)
    out = -np.expm1(-(x * x) / (2.0 * sigma * sigma))
    return np.where(x > 0, out, 0.0)


def rayleigh_quantile(q: float, sigma: float = 1.0) -> float:
    return float(sigma * np.sqrt(-2.0 * np.log1p(-q)))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 1-D or 2-D array with max-subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    if logits.shape[-1] < 2:
        raise ValueError("softmax needs at least two classes")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(pred: np.ndarray, label) -> np.ndarray:
    """-log(pred[label] + 1e-12); vectorised over a leading batch axis."""
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label)
    n = pred.shape[-1]
    if np.any(label < 0) or np.any(label >= n):
        raise ValueError(f"label out of range [0, {n})")
    if pred.ndim == 1:
        return float(-np.log(pred[int(label)] + CE_FLOOR))
    picked = pred[np.arange(pred.shape[0]), label]
    return -np.log(picked + CE_FLOOR)


def cross_entropy_grad_logits(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the floored cross-entropy w.r.t. the pre-softmax logits."""
    rows = np.arange(probs.shape[0])
    py = probs[rows, labels]
    onehot = np.zeros_like(probs)
    onehot[rows, labels] = 1.0
    return (py / (py + CE_FLOOR))[:, None] * (probs - onehot)
