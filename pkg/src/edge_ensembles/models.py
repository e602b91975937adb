"""Surrogate encoder/decoder networks and ensemble training.

Every network is a small tanh MLP with hand-written backpropagation. Weight
arrays may carry a leading node axis, in which case the same forward and
backward code trains all decoders of an ensemble in one batched matmul.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .numerics import (
    RngStream,
    cross_entropy,
    cross_entropy_grad_logits,
    softmax,
)
from .quantizer import (
    Codebook,
    QuantizedFeatures,
    boundary_margin,
    quantize,
    straight_through_grad,
    vq_loss_grads,
)

log = logging.getLogger(__name__)

MODEL_MAGIC = b"EEM1"


# --------------------------------------------------------------------------
# MLP primitives


@dataclass
class MlpParams:
    """Ordered ``(W, b)`` pairs; tanh on hidden layers, identity on the output."""

    layers: List[Tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an MLP needs at least one layer")
        for k, (W, b) in enumerate(self.layers):
            if W.shape[-1] != b.shape[-1]:
                raise ValueError(f"layer {k}: weight/bias width mismatch")
            if k and self.layers[k - 1][0].shape[-1] != W.shape[-2]:
                raise ValueError(f"layer {k}: input dim does not chain from layer {k - 1}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k}: non-finite parameters")

    @property
    def dims(self) -> List[int]:
        return [self.layers[0][0].shape[-2]] + [W.shape[-1] for W, _ in self.layers]

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    @classmethod
    def initialize(cls, dims: Sequence[int], rng: RngStream, stack: Optional[int] = None):
        """Gaussian weights with std ``1/sqrt(fan_in)``, zero biases."""
        layers = []
        lead = () if stack is None else (stack,)
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            W = rng.normal(lead + (fan_in, fan_out), std=1.0 / np.sqrt(fan_in))
            layers.append((W, np.zeros(lead + (fan_out,))))
        return cls(layers)

    @classmethod
    def identity(cls, dim: int) -> "MlpParams":
        return cls([(np.eye(dim), np.zeros(dim))])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in self.layers])

    def copy(self) -> "MlpParams":
        return MlpParams([(W.copy(), b.copy()) for W, b in self.layers])

    def unstack(self, j: int) -> "MlpParams":
        return MlpParams([(W[j].copy(), b[j].copy()) for W, b in self.layers])

    def to_bytes(self) -> bytes:
        return MODEL_MAGIC + _mlp_body(self)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MlpParams":
        if blob[:4] != MODEL_MAGIC:
            raise ValueError("not a model file (bad magic)")
        params, end = _read_mlp_body(blob, 4)
        if end != len(blob):
            raise ValueError("trailing bytes after model payload")
        return params


def _mlp_body(params: MlpParams) -> bytes:
    if params.layers[0][0].ndim != 2:
        raise ValueError("only unstacked MLPs can be serialised")
    out = [struct.pack("<I", len(params.layers))]
    out += [struct.pack("<II", *W.shape) for W, _ in params.layers]
    for W, b in params.layers:
        out.append(W.astype("<f8").tobytes())
        out.append(b.astype("<f8").tobytes())
    return b"".join(out)


def _read_mlp_body(blob: bytes, off: int) -> Tuple[MlpParams, int]:
    (n_layers,) = struct.unpack_from("<I", blob, off)
    off += 4
    shapes = []
    for _ in range(n_layers):
        shapes.append(struct.unpack_from("<II", blob, off))
        off += 8
    layers = []
    for fan_in, fan_out in shapes:
        nW = fan_in * fan_out
        W = np.frombuffer(blob, "<f8", nW, off).astype(np.float64).reshape(fan_in, fan_out)
        off += 8 * nW
        b = np.frombuffer(blob, "<f8", fan_out, off).astype(np.float64)
        off += 8 * fan_out
        layers.append((W, b))
    return MlpParams(layers), off


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Return ``(output, activations)``; activations feed :func:`mlp_backward`."""
    acts = [x]
    h = x
    last = len(params.layers) - 1
    for k, (W, b) in enumerate(params.layers):
        h = np.matmul(h, W) + b[..., None, :] if W.ndim == 3 else h @ W + b
        if k < last:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def mlp_backward(params: MlpParams, acts, grad_out: np.ndarray):
    """Backpropagate ``grad_out``; returns ``(layer_grads, grad_input)``."""
    grads = [None] * len(params.layers)
    g = grad_out
    for k in range(len(params.layers) - 1, -1, -1):
        W, _ = params.layers[k]
        if k < len(params.layers) - 1:
            g = g * (1.0 - acts[k + 1] ** 2)
        x_in = acts[k]
        gW = np.matmul(np.swapaxes(x_in, -1, -2), g)
        gb = g.sum(axis=-2)
        if W.ndim == 2 and gW.ndim == 3:
            gW, gb = gW.sum(axis=0), gb.sum(axis=0)
        grads[k] = (gW, gb)
        g = np.matmul(g, np.swapaxes(W, -1, -2))
    return grads, g


def _sgd(params: MlpParams, grads, lr: float) -> None:
    for (W, b), (gW, gb) in zip(params.layers, grads):
        W -= lr * gW
        b -= lr * gb


# --------------------------------------------------------------------------
# Encoder, decoders and node models


@dataclass
class SharedEncoder:
    """Encoder MLP plus codebook, shared by every node of an ensemble."""

    mlp: MlpParams
    codebook: Codebook

    def __post_init__(self):
        if self.mlp.out_dim != self.codebook.m * self.codebook.d:
            raise ValueError(
                f"encoder output dim {self.mlp.out_dim} != m*d = "
                f"{self.codebook.m * self.codebook.d}"
            )

    @property
    def in_dim(self) -> int:
        return self.mlp.in_dim

    @property
    def feature_dim(self) -> int:
        return self.mlp.out_dim

    def features(self, x: np.ndarray) -> np.ndarray:
        """Continuous encoder output reshaped to ``(..., m, d)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input dim {x.shape[-1]} != encoder input dim {self.in_dim}")
        out, _ = mlp_forward(self.mlp, x)
        return out.reshape(*out.shape[:-1], self.codebook.m, self.codebook.d)

    def encode(self, x: np.ndarray) -> QuantizedFeatures:
        return quantize(self.codebook, self.features(x))


def encode(encoder: SharedEncoder, x: np.ndarray) -> QuantizedFeatures:
    """Quantized features ``f_Q(f_E(x))`` for one sample or a batch."""
    return encoder.encode(x)


def decode(decoder: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """Class-probability vector(s) produced by a decoder."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[-1] != decoder.in_dim:
        raise ValueError(f"input dim {inputs.shape[-1]} != decoder input dim {decoder.in_dim}")
    logits, _ = mlp_forward(decoder, inputs)
    return softmax(logits)


@dataclass
class NodeModel:
    """One device: a reference to the shared encoder and its two decoders.

    ``val_acc_raw`` is measured with the raw-input decoder, ``val_acc_quant``
    through the full encode-quantize-decode pipeline.
    """

    node_id: int
    encoder: SharedEncoder
    decoder_raw: MlpParams
    decoder_quant: MlpParams
    val_acc_raw: float = 0.0
    val_acc_quant: float = 0.0

    @property
    def validation_accuracy(self) -> float:
        return self.val_acc_quant

    def predict_proba_quant(self, z_flat: np.ndarray) -> np.ndarray:
        return decode(self.decoder_quant, z_flat)

    def predict_proba_raw(self, x: np.ndarray) -> np.ndarray:
        return decode(self.decoder_raw, x)

    def to_bytes(self) -> bytes:
        head = MODEL_MAGIC + struct.pack("<Idd", self.node_id, self.val_acc_raw, self.val_acc_quant)
        return head + _mlp_body(self.decoder_raw) + _mlp_body(self.decoder_quant)

    @classmethod
    def from_bytes(cls, blob: bytes, encoder: SharedEncoder) -> "NodeModel":
        if blob[:4] != MODEL_MAGIC:
            raise ValueError("not a node model file (bad magic)")
        node_id, v_raw, v_quant = struct.unpack_from("<Idd", blob, 4)
        raw, off = _read_mlp_body(blob, 4 + 20)
        quant, off = _read_mlp_body(blob, off)
        if off != len(blob):
            raise ValueError("trailing bytes after node model payload")
        return cls(node_id, encoder, raw, quant, v_raw, v_quant)


@dataclass
class Ensemble:
    encoder: SharedEncoder
    nodes: List[NodeModel]
    n_classes: int
    beta: float = 0.25

    @property
    def K(self) -> int:
        return len(self.nodes)

    def subset(self, k: int) -> "Ensemble":
        return Ensemble(self.encoder, self.nodes[:k], self.n_classes, self.beta)

    def node_probabilities(self, X: np.ndarray):
        """All node outputs on a batch.

        Returns ``(quant, raw)`` arrays of shape ``(K, n, N)``: quantized-path
        and raw-path class probabilities of every node for every sample.
        """
        z = self.encoder.encode(X).flat()
        quant = np.stack([nd.predict_proba_quant(z) for nd in self.nodes])
        raw = np.stack([nd.predict_proba_raw(X) for nd in self.nodes])
        return quant, raw

    def save(self, directory) -> List[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = [directory / "encoder.eem", directory / "codebook.eeq"]
        paths[0].write_bytes(self.encoder.mlp.to_bytes())
        self.encoder.codebook.save(paths[1])
        for nd in self.nodes:
            p = directory / f"node_{nd.node_id:03d}.eem"
            p.write_bytes(nd.to_bytes())
            paths.append(p)
        meta = directory / "ensemble.txt"
        meta.write_text(f"K={self.K}\nn_classes={self.n_classes}\nbeta={self.beta!r}\n")
        paths.append(meta)
        return paths

    @classmethod
    def load(cls, directory) -> "Ensemble":
        directory = Path(directory)
        meta_path = directory / "ensemble.txt"
        required = [directory / "encoder.eem", directory / "codebook.eeq", meta_path]
        missing = [str(p) for p in required if not p.exists()]
        if missing:
            raise FileNotFoundError("missing model files: " + ", ".join(missing))
        meta = dict(line.split("=", 1) for line in meta_path.read_text().split())
        K = int(meta["K"])
        node_paths = [directory / f"node_{j:03d}.eem" for j in range(K)]
        missing = [str(p) for p in node_paths if not p.exists()]
        if missing:
            raise FileNotFoundError("missing model files: " + ", ".join(missing))
        enc = SharedEncoder(
            MlpParams.from_bytes(required[0].read_bytes()), Codebook.load(required[1])
        )
        nodes = [NodeModel.from_bytes(p.read_bytes(), enc) for p in node_paths]
        return cls(enc, nodes, int(meta["n_classes"]), float(meta["beta"]))


# --------------------------------------------------------------------------
# Data


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("dataset needs an (n, f) feature matrix and n labels")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("labels out of range")

    def __len__(self):
        return len(self.y)

    def take(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.n_classes)


@dataclass(frozen=True)
class DataConfig:
    n_features: int = 16
    n_classes: int = 4
    components_per_class: int = 8
    separation: float = 4.0
    noise: float = 1.0
    n_train: int = 1000
    n_val: int = 400
    n_test: int = 400


def make_synthetic_task(cfg: DataConfig, rng: RngStream):
    """Gaussian-mixture classification task split into train/val/test.

    Each class mixes ``components_per_class`` isotropic Gaussians whose means
    are drawn with norm ``separation``.
    """
    n_comp = cfg.n_classes * cfg.components_per_class
    means = rng.normal((n_comp, cfg.n_features))
    means *= cfg.separation / np.linalg.norm(means, axis=1, keepdims=True)
    splits = []
    for n in (cfg.n_train, cfg.n_val, cfg.n_test):
        # balanced labels so every class appears in every split
        y = np.arange(n) % cfg.n_classes
        y = y[rng.permutation(n)]
        comp = np.minimum(
            (rng.uniform(n) * cfg.components_per_class).astype(np.int64),
            cfg.components_per_class - 1,
        )
        centers = means[y * cfg.components_per_class + comp]
        X = centers + cfg.noise * rng.normal((n, cfg.n_features))
        splits.append(Dataset(X, y, cfg.n_classes))
    return tuple(splits)


# --------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    n_nodes: int = 4
    epochs: int = 80
    learning_rate: float = 0.05
    batch_size: int = 32
    encoder_hidden: Tuple[int, ...] = ()
    decoder_hidden: Tuple[int, ...] = (32,)
    splits: int = 16
    sub_dim: int = 1
    codebook_size: int = 16
    beta: float = 0.25
    diversity: str = "random-init"
    shared_fraction: float = 0.68
    private_size: Optional[int] = None
    encoder_epochs: Optional[int] = None
    codebook_init: str = "uniform"

    def validate(self) -> None:
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        if self.diversity not in ("random-init", "bagging"):
            raise ValueError(f"unknown diversity mode {self.diversity!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")
        P = self.codebook_size
        if P < 1 or P & (P - 1):
            raise ValueError("codebook_size must be a power of two")
        if self.splits < 1 or self.sub_dim < 1:
            raise ValueError("splits and sub_dim must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.codebook_init not in ("uniform", "data"):
            raise ValueError(f"unknown codebook_init {self.codebook_init!r}")
        if not 0.0 <= self.shared_fraction <= 1.0:
            raise ValueError("shared_fraction must lie in [0, 1]")


@dataclass
class TrainingHistory:
    """Per-node total training loss; row 0 is measured before any update."""

    total_loss: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def bagging_splits(n_train: int, cfg: TrainConfig, rng: RngStream) -> List[np.ndarray]:
    """Training indices per node: a shared pool plus a private shard each.

    The pool keeps ``shared_fraction`` of the data; shards default to
    ``(n_train - pool) // max(K, 16)`` samples, which keeps the 34:1
    pool-to-shard ratio at ``K = 16``.
    """
    K = cfg.n_nodes
    perm = rng.permutation(n_train)
    pool = int(round(cfg.shared_fraction * n_train))
    shard = cfg.private_size
    if shard is None:
        shard = (n_train - pool) // max(K, 16)
    if pool + K * shard > n_train:
        raise ValueError(
            f"bagging needs {pool} + {K}x{shard} samples but only {n_train} are available"
        )
    shared = perm[:pool]
    return [
        np.concatenate([shared, perm[pool + j * shard: pool + (j + 1) * shard]])
        for j in range(K)
    ]


def _data_codebook(encoder, X, codebook, rng):
    """Codewords seeded from encoder sub-vectors of random training samples."""
    rows = encoder.features(X).reshape(-1, codebook.d)
    pick = rng.permutation(len(rows))[: codebook.P]
    out = rows[pick].copy()
    if len(out) < codebook.P:
        out = np.concatenate([out, codebook.vectors[len(out):]])
    # jitter keeps rows distinct even if two sampled sub-vectors coincide
    return out + 1e-6 * rng.normal(out.shape)


def _quant_forward(encoder: SharedEncoder, X: np.ndarray):
    x_e_flat, enc_acts = mlp_forward(encoder.mlp, X)
    cb = encoder.codebook
    q = quantize(cb, x_e_flat.reshape(*x_e_flat.shape[:-1], cb.m, cb.d))
    return x_e_flat, enc_acts, q


def total_loss_per_node(encoder, dec_quant_stack, X_nodes, y_nodes, beta):
    """Mean ``task + vq + beta*commit`` of each node on its own samples."""
    out = []
    cb = encoder.codebook
    for j, (X, y) in enumerate(zip(X_nodes, y_nodes)):
        x_e, _, q = _quant_forward(encoder, X)
        dec = MlpParams([(W[j], b[j]) for W, b in dec_quant_stack.layers])
        probs = decode(dec, q.flat())
        sq = np.mean(((x_e.reshape(-1, cb.m, cb.d) - q.dequantized) ** 2).sum(axis=(1, 2)))
        out.append(float(np.mean(cross_entropy(probs, y)) + (1.0 + beta) * sq))
    return np.array(out)


def _accuracy(probs: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(probs, axis=-1) == y))


def train_ensemble(train: Dataset, val: Dataset, cfg: TrainConfig, rng: RngStream):
    """Train a shared encoder/codebook and ``K`` diverse node decoders.

    Each SGD step feeds every node its own mini-batch, shuffled per node and
    drawn from the node's bag in bagging mode. Node decoders follow
    their own loss; the encoder and codebook follow the mean over nodes, with
    the decoder gradient copied straight through the quantizer.

    Returns ``(ensemble, history)``.
    """
    cfg.validate()
    if len(train) == 0:
        raise ValueError("empty training set")
    K, N = cfg.n_nodes, train.n_classes
    feat_dim = cfg.splits * cfg.sub_dim

    enc_mlp = MlpParams.initialize([train.X.shape[1], *cfg.encoder_hidden, feat_dim], rng)
    codebook = Codebook.initialize(cfg.codebook_size, cfg.sub_dim, cfg.splits, rng)
    dec_q = MlpParams.initialize([feat_dim, *cfg.decoder_hidden, N], rng, stack=K)
    dec_r = MlpParams.initialize([train.X.shape[1], *cfg.decoder_hidden, N], rng, stack=K)
    encoder = SharedEncoder(enc_mlp, codebook)
    if cfg.codebook_init == "data":
        codebook.vectors[:] = _data_codebook(encoder, train.X, codebook, rng)

    if cfg.diversity == "bagging":
        node_idx = bagging_splits(len(train), cfg, rng)
    else:
        node_idx = [np.arange(len(train))] * K
    for j, idx in enumerate(node_idx):
        if len(np.unique(train.y[idx])) < N:
            raise ValueError(f"degenerate shard: node {j} is missing a class")
    n_per_node = len(node_idx[0])
    X_nodes = [train.X[idx] for idx in node_idx]
    y_nodes = [train.y[idx] for idx in node_idx]

    lr, B, beta = cfg.learning_rate, cfg.batch_size, cfg.beta
    history = [total_loss_per_node(encoder, dec_q, X_nodes, y_nodes, beta)]

    enc_epochs = cfg.epochs if cfg.encoder_epochs is None else cfg.encoder_epochs
    for epoch in range(cfg.epochs):
        train_encoder = epoch < enc_epochs
        perms = np.stack([rng.permutation(n_per_node) for _ in range(K)])
        for start in range(0, n_per_node, B):
            cols = perms[:, start:start + B]
            Xb = np.stack([X_nodes[j][cols[j]] for j in range(K)])  # (K, b, f)
            yb = np.stack([y_nodes[j][cols[j]] for j in range(K)])
            nb = Xb.shape[1]

            x_e, enc_acts, q = _quant_forward(encoder, Xb)
            z = q.dequantized.reshape(K, nb, feat_dim)
            logits, dacts = mlp_forward(dec_q, z)
            if not np.all(np.isfinite(logits)):
                raise RuntimeError(
                    f"training diverged at epoch {epoch + 1}; reduce learning_rate"
                )
            g_logits = cross_entropy_grad_logits(
                softmax(logits).reshape(-1, N), yb.reshape(-1)
            ).reshape(K, nb, N) / nb
            dq_grads, g_z = mlp_backward(dec_q, dacts, g_logits)

            # encoder/codebook objective is the mean of the K node losses
            g_commit, g_cb = vq_loss_grads(
                x_e.reshape(K * nb, cfg.splits, cfg.sub_dim),
                q_flat(q, K * nb),
                codebook.P,
                beta,
            )
            g_xe = straight_through_grad(g_z) / K + g_commit.reshape(K, nb, feat_dim)
            enc_grads, _ = mlp_backward(encoder.mlp, enc_acts, g_xe)

            r_logits, racts = mlp_forward(dec_r, Xb)
            g_r = cross_entropy_grad_logits(
                softmax(r_logits).reshape(-1, N), yb.reshape(-1)
            ).reshape(K, nb, N) / nb
            dr_grads, _ = mlp_backward(dec_r, racts, g_r)

            _sgd(dec_q, dq_grads, lr)
            _sgd(dec_r, dr_grads, lr)
            if train_encoder:
                _sgd(encoder.mlp, enc_grads, lr)
                codebook.vectors -= lr * g_cb
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                losses = total_loss_per_node(encoder, dec_q, X_nodes, y_nodes, beta)
            except ValueError:
                losses = np.full(K, np.nan)
        if not np.all(np.isfinite(losses)) or not np.all(np.isfinite(codebook.vectors)):
            raise RuntimeError(
                f"training diverged at epoch {epoch + 1}; reduce learning_rate"
            )
        history.append(losses)
        log.debug("epoch %d mean L_tot %.4f", epoch + 1, history[-1].mean())

    # codebook rows may collide only in pathological runs; the constructor checks it
    encoder = SharedEncoder(encoder.mlp, Codebook(codebook.vectors, codebook.m))
    nodes = []
    z_val = encoder.encode(val.X).flat() if len(val) else None
    for j in range(K):
        raw, quant = dec_r.unstack(j), dec_q.unstack(j)
        v_raw = _accuracy(decode(raw, val.X), val.y) if len(val) else 0.0
        v_quant = _accuracy(decode(quant, z_val), val.y) if len(val) else 0.0
        nodes.append(NodeModel(j, encoder, raw, quant, v_raw, v_quant))
    return Ensemble(encoder, nodes, N, beta), TrainingHistory(np.array(history))


def q_flat(q: QuantizedFeatures, n: int) -> QuantizedFeatures:
    """Collapse leading batch axes of ``q`` into a single axis of length ``n``."""
    return QuantizedFeatures(
        q.indices.reshape(n, -1), q.dequantized.reshape(n, *q.dequantized.shape[-2:])
    )


# --------------------------------------------------------------------------
# Gradient checking


@dataclass
class GradFixture:
    encoder: SharedEncoder
    decoder_quant: MlpParams
    decoder_raw: MlpParams
    X: np.ndarray
    y: np.ndarray
    beta: float = 0.25


def make_grad_fixture(
    rng: RngStream,
    n_features: int = 6,
    hidden: int = 5,
    splits: int = 2,
    sub_dim: int = 2,
    codebook_size: int = 8,
    n_classes: int = 3,
    batch: int = 4,
    beta: float = 0.25,
    min_margin: float = 1e-3,
) -> GradFixture:
    """Random small model and batch with every sub-vector at least
    ``min_margin`` away from a quantization boundary."""
    feat = splits * sub_dim
    enc = MlpParams.initialize([n_features, hidden, feat], rng)
    cb = Codebook(rng.normal((codebook_size, sub_dim)), splits)
    encoder = SharedEncoder(enc, cb)
    rows = []
    while len(rows) < batch:
        x = rng.normal((n_features,))
        if boundary_margin(cb, encoder.features(x)).min() >= min_margin:
            rows.append(x)
    X = np.stack(rows)
    y = np.minimum((rng.uniform(batch) * n_classes).astype(np.int64), n_classes - 1)
    return GradFixture(
        encoder,
        MlpParams.initialize([feat, hidden, n_classes], rng),
        MlpParams.initialize([n_features, hidden, n_classes], rng),
        X,
        y,
        beta,
    )


def _analytic(fx: GradFixture):
    enc = fx.encoder
    n = len(fx.y)
    x_e, enc_acts, q = _quant_forward(enc, fx.X)
    logits, dacts = mlp_forward(fx.decoder_quant, q.flat())
    g_logits = cross_entropy_grad_logits(softmax(logits), fx.y) / n
    dq_grads, g_z = mlp_backward(fx.decoder_quant, dacts, g_logits)
    g_commit, g_cb = vq_loss_grads(x_e.reshape(q.dequantized.shape), q, enc.codebook.P, fx.beta)
    g_xe = straight_through_grad(g_z) + g_commit.reshape(x_e.shape)
    enc_grads, _ = mlp_backward(enc.mlp, enc_acts, g_xe)
    r_logits, racts = mlp_forward(fx.decoder_raw, fx.X)
    dr_grads, _ = mlp_backward(fx.decoder_raw, racts, cross_entropy_grad_logits(softmax(r_logits), fx.y) / n)
    return dq_grads, dr_grads, enc_grads, g_cb, q


def _central_diff(f, arr: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        out[i] = (fp - fm) / (2.0 * h)
    return out


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(), np.abs(b).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - b).max() / scale)


def grad_check(fx: GradFixture, path: str = "decoder", h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``path="decoder"`` checks both decoders with their inputs held fixed.
    ``path="encoder"`` checks the encoder against a surrogate loss in which
    the quantizer is replaced by a constant shift onto the selected codewords
    (the straight-through view) and the codebook against the VQ term with the
    assignments held fixed. Relative error per parameter array is
    ``max|a - n| / max(max|a|, max|n|)``.
    """
    dq_grads, dr_grads, enc_grads, g_cb, q = _analytic(fx)
    n = len(fx.y)
    errs = []
    if path == "decoder":
        z = q.flat()
        for dec, grads, inp in ((fx.decoder_quant, dq_grads, z), (fx.decoder_raw, dr_grads, fx.X)):
            loss = lambda dec=dec, inp=inp: float(np.mean(cross_entropy(decode(dec, inp), fx.y)))
            for (W, b), (gW, gb) in zip(dec.layers, grads):
                errs.append(_rel_err(gW, _central_diff(loss, W, h)))
                errs.append(_rel_err(gb, _central_diff(loss, b, h)))
    elif path == "encoder":
        enc = fx.encoder
        z0 = q.dequantized
        shift = z0 - enc.features(fx.X)

        def surrogate():
            x_e = enc.features(fx.X)
            task = np.mean(cross_entropy(decode(fx.decoder_quant, (x_e + shift).reshape(n, -1)), fx.y))
            commit = fx.beta * np.mean(((x_e - z0) ** 2).sum(axis=(1, 2)))
            return float(task + commit)

        for (W, b), (gW, gb) in zip(enc.mlp.layers, enc_grads):
            errs.append(_rel_err(gW, _central_diff(surrogate, W, h)))
            errs.append(_rel_err(gb, _central_diff(surrogate, b, h)))
        x_e0 = enc.features(fx.X)
        cb = enc.codebook.vectors

        def vq_term():
            zq = cb[q.indices]
            return float(np.mean(((x_e0 - zq) ** 2).sum(axis=(1, 2))))

        errs.append(_rel_err(g_cb, _central_diff(vq_term, cb, h)))
    else:
        raise ValueError(f"unknown gradient path {path!r}")
    return max(errs)
