"""Collaborative inference with quantized shared features across edge users."""
from .latency import LatencyConfig, closed_form_cdf, monte_carlo_cdf, round_delay, t_max_bound
from .models import (
    DataConfig,
    Ensemble,
    NodeModel,
    SharedEncoder,
    TrainConfig,
    decode,
    encode,
    make_synthetic_task,
    train_ensemble,
)
from .network import CapacityDistribution, NetworkSnapshot, active_neighbors, sample_snapshot
from .numerics import RngStream, cross_entropy, rng_draws, softmax
from .protocol import aggregate_mean, aggregate_weighted, aggregation_weights, run_round
from .quantizer import Codebook, bit_budget, quantize, vq_losses

__version__ = "0.1.0"

__all__ = [
    "Codebook",
    "CapacityDistribution",
    "DataConfig",
    "Ensemble",
    "LatencyConfig",
    "NetworkSnapshot",
    "NodeModel",
    "RngStream",
    "SharedEncoder",
    "TrainConfig",
    "active_neighbors",
    "aggregate_mean",
    "aggregate_weighted",
    "aggregation_weights",
    "bit_budget",
    "closed_form_cdf",
    "cross_entropy",
    "decode",
    "encode",
    "make_synthetic_task",
    "monte_carlo_cdf",
    "quantize",
    "rng_draws",
    "round_delay",
    "run_round",
    "sample_snapshot",
    "softmax",
    "t_max_bound",
    "train_ensemble",
    "vq_losses",
]
