"""Inference delay of one collaborative round: per-link delays, the round
maximum, its closed-form distribution and a Monte Carlo estimator."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .network import CapacityDistribution, NetworkSnapshot
from .numerics import Bernoulli, RngStream, rng_draws

_MC_CHUNK = 100_000


@dataclass(frozen=True)
class LatencyConfig:
    """Compute delays ``tau_p`` (ms, one per node), payload sizes in bits,
    connectivity probability and the capacity law of active links."""

    tau_p: tuple
    b1: float
    b2: float = 0.0
    p: float = 1.0
    dist: CapacityDistribution = CapacityDistribution()

    def __post_init__(self):
        tau = tuple(float(t) for t in np.atleast_1d(self.tau_p))
        object.__setattr__(self, "tau_p", tau)
        if not tau or min(tau) <= 0:
            raise ValueError("compute delays must be positive")
        if self.b1 < 1:
            raise ValueError("b1 must be at least one bit")
        if self.b2 < 0:
            raise ValueError("b2 must be nonnegative")
        Bernoulli(self.p)

    @classmethod
    def homogeneous(cls, K: int, tau: float = 700.0, **kw) -> "LatencyConfig":
        return cls(tau_p=(tau,) * K, **kw)

    @property
    def K(self) -> int:
        return len(self.tau_p)

    @property
    def tau(self) -> np.ndarray:
        return np.asarray(self.tau_p)


@dataclass(frozen=True)
class DelayDistribution:
    eps: np.ndarray
    prob: np.ndarray


def link_delay(L: int, C: float, cfg: LatencyConfig, j: int) -> float:
    """``L * (B1/C + B2/C + tau_j)``: send features, decode, send the answer back."""
    if not L:
        return 0.0
    if not C > 0:
        raise ValueError("an active link needs positive capacity")
    return cfg.b1 / C + cfg.b2 / C + cfg.tau_p[j]


def round_delay(snapshot: NetworkSnapshot, cfg: LatencyConfig, i_t: int) -> float:
    """Largest per-link delay seen by ``i_t``; its own term is its compute time."""
    if snapshot.K != cfg.K:
        raise ValueError(f"snapshot has {snapshot.K} users, config has {cfg.K}")
    worst = cfg.tau_p[i_t]
    for j in range(cfg.K):
        if j != i_t:
            worst = max(worst, link_delay(snapshot.links[i_t, j], snapshot.capacities[i_t, j], cfg, j))
    return worst


def closed_form_cdf(cfg: LatencyConfig, i_t: int, eps):
    """``Pr(delay < eps)`` for i.i.d. links, with payload ``B = b1``.

    Zero for ``eps <= tau_{i_t}``. Otherwise every other node ``j`` contributes
    ``1 - p*F_C(B/(eps - tau_j))`` if ``eps > tau_j`` and ``1 - p`` if not.
    Accepts a scalar or an array of ``eps`` values.
    """
    eps_arr = np.asarray(eps, dtype=np.float64)
    if np.any(eps_arr <= 0):
        raise ValueError("eps must be positive")
    scalar = eps_arr.ndim == 0
    e = np.atleast_1d(eps_arr)
    tau = cfg.tau
    others = np.delete(tau, i_t)
    out = np.ones_like(e)
    for tj in others:
        gap = e - tj
        reach = gap > 0
        factor = np.full_like(e, 1.0 - cfg.p)
        with np.errstate(divide="ignore"):
            thresh = np.where(reach, cfg.b1 / np.where(reach, gap, 1.0), 0.0)
        factor[reach] = 1.0 - cfg.p * cfg.dist.cdf(thresh[reach])
        out *= factor
    out[e <= tau[i_t]] = 0.0
    return float(out[0]) if scalar else out


def _mc_delays(cfg: LatencyConfig, i_t: int, trials: int, rng: RngStream) -> np.ndarray:
    """Simulated round delays; only the links incident to ``i_t`` are drawn,
    which has the same law as drawing full snapshots."""
    others = np.delete(np.arange(cfg.K), i_t)
    tau_o = cfg.tau[others]
    out = np.empty(trials)
    for start in range(0, trials, _MC_CHUNK):
        n = min(_MC_CHUNK, trials - start)
        links = rng_draws(rng, Bernoulli(cfg.p), n * len(others)).reshape(n, len(others)).astype(bool)
        caps = np.zeros(links.shape)
        caps[links] = cfg.dist.sample(rng, int(links.sum()))
        with np.errstate(divide="ignore"):
            per_link = np.where(links, (cfg.b1 + cfg.b2) / np.where(links, caps, 1.0) + tau_o, 0.0)
        worst = per_link.max(axis=1) if len(others) else np.zeros(n)
        out[start:start + n] = np.maximum(worst, cfg.tau_p[i_t])
    return out


def monte_carlo_cdf(
    cfg: LatencyConfig,
    i_t: int,
    eps_grid: Sequence[float],
    trials: int,
    rng: RngStream,
    partitions: int = 1,
    workers: Optional[int] = None,
) -> DelayDistribution:
    """Empirical ``Pr(delay < eps)`` over ``trials`` simulated rounds.

    With ``partitions > 1`` the trials are split evenly and partition ``k``
    draws from ``rng.spawn(k)``; the merged result does not depend on the
    order in which partitions complete.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    eps = np.asarray(eps_grid, dtype=np.float64)
    if partitions <= 1:
        delays = [_mc_delays(cfg, i_t, trials, rng)]
    else:
        sizes = [trials // partitions + (k < trials % partitions) for k in range(partitions)]
        jobs = [(sizes[k], rng.spawn(k)) for k in range(partitions)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            delays = list(pool.map(lambda job: _mc_delays(cfg, i_t, *job), jobs))
    counts = np.zeros(len(eps), dtype=np.int64)
    for d in delays:
        counts += np.searchsorted(np.sort(d), eps, side="left")
    return DelayDistribution(eps, counts / trials)


def t_max_bound(cfg: LatencyConfig, c_min: float) -> float:
    """Worst-case round delay ``B1/c_min + tau`` for homogeneous compute delays."""
    if not c_min > 0:
        raise ValueError("c_min must be positive")
    tau = cfg.tau
    if not np.all(tau == tau[0]):
        raise ValueError("t_max_bound assumes identical compute delays")
    return cfg.b1 / c_min + float(tau[0])


def default_eps_grid(cfg: LatencyConfig, points: int = 256, tail_q: float = 0.01) -> np.ndarray:
    """Uniform grid from ``0.9*min(tau)`` to twice a worst-case delay.

    For capacity laws unbounded below the worst case uses the ``tail_q``
    capacity quantile in place of the minimum capacity.
    """
    c = cfg.dist.lower_support or cfg.dist.quantile(tail_q)
    top = cfg.b1 / c + float(cfg.tau.max())
    return np.linspace(0.9 * float(cfg.tau.min()), 2.0 * top, points)


def write_cdf_csv(path, eps, closed, mc) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon_ms", "prob_closed_form", "prob_monte_carlo"])
        for row in zip(eps, closed, mc):
            w.writerow([f"{v:.6g}" for v in row])
