"""scikit-learn compatible wrapper around ensemble training and aggregation."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .models import Dataset, TrainConfig, train_ensemble
from .numerics import RngStream
from .protocol import aggregation_weights


class EdgeEnsembleClassifier(ClassifierMixin, BaseEstimator):
    """Shared quantizing encoder with ``n_nodes`` decoders, aggregated as if
    every node were reachable.

    ``algorithm="algo1"`` averages the quantized-path outputs. ``"algo2"``
    weights node ``inferring_node``'s raw-path output against the others'
    quantized outputs by validation accuracy. A stratified
    ``validation_fraction`` of the training data is held out to measure
    those accuracies.
    """

    def __init__(
        self,
        n_nodes=4,
        epochs=80,
        learning_rate=0.05,
        batch_size=32,
        encoder_hidden=(),
        decoder_hidden=(32,),
        splits=16,
        sub_dim=1,
        codebook_size=16,
        beta=0.25,
        diversity="random-init",
        algorithm="algo1",
        rho=8.0,
        inferring_node=0,
        validation_fraction=0.25,
        random_state=0,
    ):
        self.n_nodes = n_nodes
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.encoder_hidden = encoder_hidden
        self.decoder_hidden = decoder_hidden
        self.splits = splits
        self.sub_dim = sub_dim
        self.codebook_size = codebook_size
        self.beta = beta
        self.diversity = diversity
        self.algorithm = algorithm
        self.rho = rho
        self.inferring_node = inferring_node
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            n_nodes=self.n_nodes,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            encoder_hidden=tuple(self.encoder_hidden),
            decoder_hidden=tuple(self.decoder_hidden),
            splits=self.splits,
            sub_dim=self.sub_dim,
            codebook_size=self.codebook_size,
            beta=self.beta,
            diversity=self.diversity,
        )

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        if self.algorithm not in ("algo1", "algo2"):
            raise ValueError(f"algorithm must be 'algo1' or 'algo2', got {self.algorithm!r}")
        if not 0 <= self.inferring_node < self.n_nodes:
            raise ValueError("inferring_node must index one of the n_nodes")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        rng = RngStream(int(self.random_state))
        val_mask = np.zeros(len(y), dtype=bool)
        for c in range(len(self.classes_)):
            members = np.flatnonzero(codes == c)
            if len(members) < 2:
                raise ValueError("every class needs at least two samples")
            n_val = min(len(members) - 1, max(1, round(self.validation_fraction * len(members))))
            val_mask[members[rng.permutation(len(members))[:n_val]]] = True
        N = len(self.classes_)
        train = Dataset(X[~val_mask], codes[~val_mask], N)
        val = Dataset(X[val_mask], codes[val_mask], N)
        self.ensemble_, self.history_ = train_ensemble(train, val, self._train_config(), rng.spawn(1))
        return self

    def transform(self, X):
        """Dequantized shared features, one row per sample."""
        check_is_fitted(self, "ensemble_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return self.ensemble_.encoder.encode(X).flat()

    def predict_proba(self, X):
        check_is_fitted(self, "ensemble_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        quant, raw = self.ensemble_.node_probabilities(X)
        if self.algorithm == "algo1":
            return quant.mean(axis=0)
        nodes = self.ensemble_.nodes
        i_t = self.inferring_node
        others = [j for j in range(len(nodes)) if j != i_t]
        V = [nodes[i_t].val_acc_raw] + [nodes[j].val_acc_quant for j in others]
        alpha = aggregation_weights(V, self.rho)
        return alpha[0] * raw[i_t] + np.tensordot(alpha[1:], quant[others], axes=1)

    def predict(self, X):
        check_is_fitted(self, "ensemble_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
