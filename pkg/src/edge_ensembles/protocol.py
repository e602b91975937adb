"""Collaborative inference rounds and their aggregation rules."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .latency import LatencyConfig, round_delay
from .models import Ensemble
from .network import NetworkSnapshot, active_neighbors

ALGORITHMS = ("algo1", "algo2")
TRACE_HEADER = ["round", "i_t", "algorithm", "participants", "prediction", "true_label", "delay_ms"]


def _first_argmax(scores: np.ndarray) -> int:
    # np.argmax already picks the lowest index among ties
    return int(np.argmax(scores))


def aggregate_mean(probs: Sequence[np.ndarray]) -> int:
    """Label maximising the averaged class probabilities."""
    if len(probs) == 0:
        raise ValueError("cannot aggregate an empty set of predictions")
    stacked = np.asarray(probs, dtype=np.float64)
    return _first_argmax(stacked.sum(axis=0) / len(stacked))


def aggregation_weights(V: Sequence[float], rho: float = 8.0, K: Optional[int] = None) -> np.ndarray:
    """Weights for the local raw-path output (index 0) and neighbour outputs.

    ``V[0]`` is the inferring user's raw-path validation accuracy, ``V[1:]``
    the neighbours' quantized-path accuracies. Accuracies are sharpened to
    relative scores ``V^rho / sum(V^rho)``; neighbours are further damped by
    ``1/sqrt(K)`` and everything is normalised by the local accuracy plus the
    damped neighbour scores.
    """
    V = np.asarray(V, dtype=np.float64)
    if K is None:
        K = len(V)
    if K < 1 or len(V) != K:
        raise ValueError(f"expected {K} accuracies, got {len(V)}")
    if np.any(V <= 0) or np.any(V > 1):
        raise ValueError("validation accuracies must lie in (0, 1]")
    sharp = V**rho
    rel = sharp / sharp.sum()
    root = np.sqrt(K)
    Z = V[0] + rel[1:].sum() / root
    alpha = rel / (root * Z)
    alpha[0] = V[0] / Z
    return alpha


def aggregate_weighted(local_prob: np.ndarray, neighbor_probs: Sequence[np.ndarray], weights) -> int:
    """Label maximising the weighted sum of local and neighbour outputs.

    ``weights[0]`` multiplies the local output, ``weights[1:]`` the neighbours
    in order. The ``1/|S|`` prefactor is kept although it cannot change the
    argmax.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(neighbor_probs) + 1:
        raise ValueError("need one weight for the local output plus one per neighbour")
    total = weights[0] * np.asarray(local_prob, dtype=np.float64)
    for w, pr in zip(weights[1:], neighbor_probs):
        total = total + w * np.asarray(pr, dtype=np.float64)
    return _first_argmax(total / len(weights))


@dataclass(frozen=True)
class InferenceRequest:
    i_t: int
    x: np.ndarray
    snapshot: NetworkSnapshot
    algorithm: str = "algo1"


@dataclass(frozen=True)
class InferenceTrace:
    prediction: int
    per_node_probs: Dict[int, np.ndarray]
    weights: Optional[Dict[int, float]]
    delay_ms: float
    participants: Tuple[int, ...]
    i_t: int
    algorithm: str

    def csv_row(self, round_index: int, true_label="") -> list:
        return [
            round_index,
            self.i_t,
            self.algorithm,
            ";".join(str(j) for j in self.participants),
            self.prediction,
            true_label,
            f"{self.delay_ms:.6g}",
        ]


def combine(
    algorithm: str,
    i_t: int,
    participants: Sequence[int],
    quant_probs: np.ndarray,
    raw_local: Optional[np.ndarray],
    val_raw: Sequence[float],
    val_quant: Sequence[float],
    rho: float = 8.0,
):
    """Aggregate one round from node outputs already computed.

    ``quant_probs[j]`` is node ``j``'s quantized-path output. Returns
    ``(prediction, per_node_probs, weights)``.
    """
    if algorithm == "algo1":
        probs = {j: quant_probs[j] for j in participants}
        return aggregate_mean([probs[j] for j in participants]), probs, None
    if algorithm != "algo2":
        raise ValueError(f"unknown algorithm {algorithm!r}")
    neighbours = [j for j in participants if j != i_t]
    probs = {i_t: raw_local}
    probs.update({j: quant_probs[j] for j in neighbours})
    V = [val_raw[i_t]] + [val_quant[j] for j in neighbours]
    alpha = aggregation_weights(V, rho, len(V))
    pred = aggregate_weighted(raw_local, [probs[j] for j in neighbours], alpha)
    weights = {i_t: float(alpha[0])}
    weights.update({j: float(a) for j, a in zip(neighbours, alpha[1:])})
    return pred, probs, weights


def run_round(req: InferenceRequest, ensemble: Ensemble, cfg: LatencyConfig, rho: float = 8.0) -> InferenceTrace:
    """One collaborative inference round.

    ``algo1``: every participant decodes the broadcast quantized features and
    the outputs are averaged. ``algo2``: the inferring user decodes the raw
    sample, neighbours decode the quantized features, and outputs are combined
    with accuracy-based weights. The same snapshot decides who participates
    and how long the round takes.
    """
    if req.snapshot.K != ensemble.K:
        raise ValueError(f"snapshot has {req.snapshot.K} users but the ensemble has {ensemble.K}")
    if req.algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {req.algorithm!r}")
    participants = tuple(sorted(active_neighbors(req.snapshot, req.i_t)))
    x = np.asarray(req.x, dtype=np.float64)
    z = ensemble.encoder.encode(x).flat()
    nodes = ensemble.nodes
    decoding = participants if req.algorithm == "algo1" else [j for j in participants if j != req.i_t]
    quant = {j: nodes[j].predict_proba_quant(z) for j in decoding}
    raw_local = nodes[req.i_t].predict_proba_raw(x) if req.algorithm == "algo2" else None
    pred, probs, weights = combine(
        req.algorithm,
        req.i_t,
        participants,
        quant,
        raw_local,
        [nd.val_acc_raw for nd in nodes],
        [nd.val_acc_quant for nd in nodes],
        rho,
    )
    delay = round_delay(req.snapshot, cfg, req.i_t)
    return InferenceTrace(pred, probs, weights, delay, participants, req.i_t, req.algorithm)
