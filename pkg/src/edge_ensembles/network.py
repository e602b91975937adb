"""Stochastic device-to-device connectivity under block fading."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .numerics import Bernoulli, RngStream, rayleigh_cdf, rayleigh_quantile, rng_draws, Rayleigh

FAMILIES = ("rayleigh", "truncated-rayleigh", "constant", "empirical")


@dataclass(frozen=True)
class CapacityDistribution:
    """Law of an active link's capacity (bits/ms), conditional on ``L = 1``.

    ``cdf`` returns ``Pr(C <= x)``. For the continuous families this equals the
    strict-inequality version; for atoms (``constant``, ``empirical``) the
    inclusive form is what makes the closed-form delay law exact.
    """

    family: str = "rayleigh"
    sigma: float = 1.0
    value: float = 1.0
    c_min: float = 0.0
    table: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown capacity family {self.family!r}")
        if self.family in ("rayleigh", "truncated-rayleigh") and not self.sigma > 0:
            raise ValueError("Rayleigh scale must be positive")
        if self.family == "truncated-rayleigh" and not self.c_min > 0:
            raise ValueError("truncated Rayleigh needs c_min > 0")
        if self.family == "constant" and not self.value > 0:
            raise ValueError("constant capacity must be positive")
        if self.family == "empirical":
            if not self.table or min(self.table) <= 0:
                raise ValueError("empirical capacity table must be nonempty and positive")
            object.__setattr__(self, "table", tuple(sorted(float(v) for v in self.table)))

    @classmethod
    def rayleigh(cls, sigma: float = 1.0):
        return cls("rayleigh", sigma=sigma)

    @classmethod
    def truncated_rayleigh(cls, sigma: float, c_min: float):
        return cls("truncated-rayleigh", sigma=sigma, c_min=c_min)

    @classmethod
    def constant(cls, value: float):
        return cls("constant", value=value)

    @classmethod
    def empirical(cls, table):
        return cls("empirical", table=tuple(table))

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.family == "rayleigh":
            return rayleigh_cdf(x, self.sigma)
        if self.family == "truncated-rayleigh":
            # the Rayleigh tail is memoryless in x^2
            shifted = (x * x - self.c_min**2) / (2.0 * self.sigma**2)
            return np.where(x >= self.c_min, -np.expm1(-np.maximum(shifted, 0.0)), 0.0)
        if self.family == "constant":
            return np.where(x >= self.value, 1.0, 0.0)
        table = np.asarray(self.table)
        return np.searchsorted(table, x, side="right") / len(table)

    def sample(self, rng: RngStream, count: int) -> np.ndarray:
        if self.family == "rayleigh":
            return rng_draws(rng, Rayleigh(self.sigma), count)
        if self.family == "truncated-rayleigh":
            u = rng.open_uniform(count)
            return np.sqrt(self.c_min**2 - 2.0 * self.sigma**2 * np.log(u))
        if self.family == "constant":
            rng.uniform(count)  # keep the draw count independent of the family
            return np.full(count, self.value)
        table = np.asarray(self.table)
        idx = np.minimum((rng.uniform(count) * len(table)).astype(np.int64), len(table) - 1)
        return table[idx]

    @property
    def lower_support(self) -> float:
        """Smallest attainable capacity (0 when unbounded below)."""
        if self.family == "truncated-rayleigh":
            return self.c_min
        if self.family == "constant":
            return self.value
        if self.family == "empirical":
            return self.table[0]
        return 0.0

    def quantile(self, q: float) -> float:
        if self.family == "rayleigh":
            return rayleigh_quantile(q, self.sigma)
        if self.family == "truncated-rayleigh":
            return float(np.sqrt(self.c_min**2 - 2.0 * self.sigma**2 * np.log1p(-q)))
        if self.family == "constant":
            return self.value
        table = np.asarray(self.table)
        return float(table[min(int(np.ceil(q * len(table))) - 1, len(table) - 1)]) if q > 0 else float(table[0])

    def to_dict(self) -> dict:
        out = {"family": self.family}
        if self.family in ("rayleigh", "truncated-rayleigh"):
            out["sigma"] = self.sigma
        if self.family == "truncated-rayleigh":
            out["c_min"] = self.c_min
        if self.family == "constant":
            out["value"] = self.value
        if self.family == "empirical":
            out["table"] = list(self.table)
        return out


@dataclass(frozen=True)
class NetworkSnapshot:
    """Link states and capacities of one inference round.

    ``links`` is symmetric with a unit diagonal. ``capacities`` is symmetric,
    zero on inactive links and ``inf`` on the diagonal (a node reaches itself
    without transmission).
    """

    links: np.ndarray
    capacities: np.ndarray

    def __post_init__(self):
        L, C = self.links, self.capacities
        if L.ndim != 2 or L.shape[0] != L.shape[1] or C.shape != L.shape:
            raise ValueError("links and capacities must be matching K x K matrices")
        if not np.array_equal(L, L.T) or not np.all(np.diag(L) == 1):
            raise ValueError("links must be symmetric with a unit diagonal")
        off = ~np.eye(len(L), dtype=bool)
        if np.any(C[off & (L == 1)] <= 0):
            raise ValueError("active links need positive capacity")
        L.setflags(write=False)
        C.setflags(write=False)

    @property
    def K(self) -> int:
        return self.links.shape[0]

    @classmethod
    def from_links(cls, links, capacity: float = 1.0) -> "NetworkSnapshot":
        """Snapshot with a common capacity on every active link (fixtures)."""
        L = np.array(links, dtype=np.int8)
        np.fill_diagonal(L, 1)
        C = np.where(L == 1, float(capacity), 0.0)
        np.fill_diagonal(C, np.inf)
        return cls(L, C)

    def to_csv(self, path) -> None:
        """Debug dump: one row per unordered pair plus the diagonal."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "link", "capacity"])
            for i in range(self.K):
                for j in range(i, self.K):
                    w.writerow([i, j, int(self.links[i, j]), f"{self.capacities[i, j]:.6g}"])


def sample_snapshot(K: int, p: float, dist: CapacityDistribution, rng: RngStream) -> NetworkSnapshot:
    """Draw i.i.d. Bernoulli(p) links on the upper triangle, mirror them, then
    draw capacities for the active links only (in row-major pair order)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    Bernoulli(p)  # validates p
    iu = np.triu_indices(K, k=1)
    active = rng_draws(rng, Bernoulli(p), len(iu[0])).astype(bool)
    caps = dist.sample(rng, int(active.sum()))
    L = np.eye(K, dtype=np.int8)
    C = np.zeros((K, K))
    rows, cols = iu[0][active], iu[1][active]
    L[rows, cols] = L[cols, rows] = 1
    C[rows, cols] = C[cols, rows] = caps
    np.fill_diagonal(C, np.inf)
    return NetworkSnapshot(L, C)


def active_neighbors(snapshot: NetworkSnapshot, i: int) -> frozenset:
    """Users with a live link to ``i`` in this round, including ``i`` itself."""
    if not 0 <= i < snapshot.K:
        raise IndexError(f"user index {i} out of range [0, {snapshot.K})")
    return frozenset(int(j) for j in np.flatnonzero(snapshot.links[i]))


def full_snapshot(K: int, capacity: float = 1.0) -> NetworkSnapshot:
    return NetworkSnapshot.from_links(np.ones((K, K)), capacity)


def isolated_snapshot(K: int) -> NetworkSnapshot:
    return NetworkSnapshot.from_links(np.eye(K))
