"""Shared trainable vector quantizer.

A feature vector of length ``m * d`` is split into ``m`` sub-vectors, each
replaced by its nearest codeword out of ``P``. Only the ``m`` indices need to
be transmitted, i.e. ``m * log2(P)`` bits.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import RngStream, Uniform, rng_draws

CODEBOOK_MAGIC = b"EEQ1"

# Rows per chunk when scanning large codebooks.
_CHUNK = 4096


@dataclass
class Codebook:
    """``P`` codewords of dimension ``d`` used on ``m`` sub-vectors."""

    vectors: np.ndarray
    m: int

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError("codebook vectors must be a P x d matrix")
        P = self.vectors.shape[0]
        if P < 1 or P & (P - 1):
            raise ValueError(f"codebook size must be a power of two, got {P}")
        if self.m < 1:
            raise ValueError("codebook needs at least one sub-vector (m >= 1)")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("codebook contains non-finite entries")
        if len(np.unique(self.vectors, axis=0)) != P:
            raise ValueError("codebook contains duplicate codewords")

    @property
    def P(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def initialize(cls, P: int, d: int, m: int, rng: RngStream) -> "Codebook":
        """Rows i.i.d. uniform on [-1/P, 1/P]."""
        bound = 1.0 / P
        vecs = rng_draws(rng, Uniform(-bound, bound), P * d).reshape(P, d)
        return cls(vecs, m)

    def copy(self) -> "Codebook":
        return Codebook(self.vectors.copy(), self.m)

    def to_bytes(self) -> bytes:
        header = CODEBOOK_MAGIC + struct.pack("<III", self.P, self.d, self.m)
        return header + self.vectors.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Codebook":
        if blob[:4] != CODEBOOK_MAGIC:
            raise ValueError("not a codebook file (bad magic)")
        P, d, m = struct.unpack("<III", blob[4:16])
        body = blob[16:]
        if len(body) != 8 * P * d:
            raise ValueError(f"codebook payload has {len(body)} bytes, expected {8 * P * d}")
        vecs = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(P, d)
        return cls(vecs, m)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Codebook":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class QuantizedFeatures:
    """Codeword indices and the stacked codewords they select.

    For a batch, ``indices`` is ``(n, m)`` and ``dequantized`` is ``(n, m, d)``.
    """

    indices: np.ndarray
    dequantized: np.ndarray

    def flat(self) -> np.ndarray:
        """Dequantized features flattened to decoder input layout."""
        lead = self.dequantized.shape[:-2]
        return self.dequantized.reshape(*lead, -1)


def squared_distances(codebook: Codebook, rows: np.ndarray) -> np.ndarray:
    """``(r, P)`` squared Euclidean distances, computed by direct differences."""
    diff = rows[:, None, :] - codebook.vectors[None, :, :]
    return np.einsum("rpd,rpd->rp", diff, diff)


def _nearest(codebook: Codebook, rows: np.ndarray) -> np.ndarray:
    out = np.empty(rows.shape[0], dtype=np.int64)
    step = max(1, _CHUNK * 16 // codebook.P)
    for start in range(0, rows.shape[0], step):
        dist = squared_distances(codebook, rows[start:start + step])
        # argmin returns the first minimum, i.e. ties go to the lowest index
        out[start:start + step] = np.argmin(dist, axis=1)
    return out


def quantize(codebook: Codebook, features: np.ndarray) -> QuantizedFeatures:
    """Map each of the ``m`` rows of ``features`` to its nearest codeword.

    ``features`` is ``(m, d)`` for one sample or ``(..., m, d)`` for a batch.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim < 2 or features.shape[-2:] != (codebook.m, codebook.d):
        raise ValueError(
            f"features of shape {features.shape} do not match (m={codebook.m}, d={codebook.d})"
        )
    rows = features.reshape(-1, codebook.d)
    idx = _nearest(codebook, rows).reshape(features.shape[:-1])
    return QuantizedFeatures(idx, codebook.vectors[idx])


def bit_budget(codebook: Codebook) -> int:
    """Bits needed to send one quantized sample: ``m * log2(P)``."""
    return codebook.m * (codebook.P.bit_length() - 1)


def vq_losses(features: np.ndarray, quantized: QuantizedFeatures, beta: float = 0.25):
    """Return ``(vq_loss, commit_loss)`` for one sample or the batch mean.

    Both are the squared distance between encoder output and selected
    codewords; they differ only in where gradients are routed (codebook for
    the first, encoder for the second) and the commitment weight ``beta``.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape != quantized.dequantized.shape:
        raise ValueError("features and quantized features differ in shape")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    diff = features - quantized.dequantized
    sq = (diff * diff).sum(axis=(-2, -1))
    sq = float(np.mean(sq))
    return sq, beta * sq


def vq_loss_grads(features: np.ndarray, quantized: QuantizedFeatures, P: int, beta: float):
    """Gradients of the batch-mean auxiliary losses.

    Returns ``(grad_features, grad_codebook)``: the commitment gradient for the
    encoder output and the VQ gradient accumulated onto the codebook rows.
    """
    features = np.asarray(features, dtype=np.float64)
    batched = features.reshape(-1, *features.shape[-2:])
    n = batched.shape[0]
    diff = batched - quantized.dequantized.reshape(batched.shape)
    grad_features = (2.0 * beta / n) * diff
    grad_cb = np.zeros((P, batched.shape[-1]))
    np.add.at(grad_cb, quantized.indices.reshape(-1), (-2.0 / n) * diff.reshape(-1, diff.shape[-1]))
    return grad_features.reshape(features.shape), grad_cb


def straight_through_grad(upstream_grad_at_z: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the encoder output: the decoder-input gradient, unchanged."""
    return upstream_grad_at_z


def boundary_margin(codebook: Codebook, rows: np.ndarray) -> np.ndarray:
    """Euclidean distance from each row to its nearest Voronoi boundary."""
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, codebook.d)
    if codebook.P == 1:
        return np.full(rows.shape[0], np.inf)
    dist = squared_distances(codebook, rows)
    best = np.argmin(dist, axis=1)
    e_best = codebook.vectors[best]
    sep = np.linalg.norm(codebook.vectors[None, :, :] - e_best[:, None, :], axis=-1)
    gap = dist - dist[np.arange(len(rows)), best][:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        margin = gap / (2.0 * sep)
    margin[np.arange(len(rows)), best] = np.inf
    return margin.min(axis=1)
