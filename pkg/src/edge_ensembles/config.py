"""JSON experiment configuration.

Every block is parsed into a frozen dataclass; unknown keys and invalid
values raise :class:`ConfigError` before any work starts.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .latency import LatencyConfig
from .models import DataConfig, TrainConfig
from .network import CapacityDistribution

TASKS = ("latency-cdf", "train", "infer", "sweep-k", "sweep-bits", "sweep-p")


class ConfigError(ValueError):
    pass


def _strict(cls, raw: Any, where: str, **convert):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kw = {k: convert[k](v) if k in convert else v for k, v in raw.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class ModelBlock:
    n_nodes: int = 4
    epochs: int = 80
    learning_rate: float = 0.05
    batch_size: int = 32
    encoder_hidden: Tuple[int, ...] = ()
    decoder_hidden: Tuple[int, ...] = (32,)
    diversity: str = "random-init"
    shared_fraction: float = 0.68
    private_size: Optional[int] = None
    encoder_epochs: Optional[int] = None


@dataclass(frozen=True)
class QuantizerBlock:
    splits: int = 16
    sub_dim: int = 1
    codebook_size: int = 16
    beta: float = 0.25
    codebook_init: str = "uniform"


@dataclass(frozen=True)
class NetworkBlock:
    p: float = 1.0
    capacity: CapacityDistribution = CapacityDistribution()


@dataclass(frozen=True)
class GridCell:
    p: float
    b1: float
    k: int


@dataclass(frozen=True)
class LatencyBlock:
    tau_ms: Any = 700.0
    b1: Optional[float] = None
    include_response: bool = False
    trials: int = 100_000
    grid_points: int = 256
    i_t: int = 0
    partitions: int = 1
    grid: Tuple[GridCell, ...] = ()


@dataclass(frozen=True)
class ProtocolBlock:
    algorithm: str = "algo1"
    rho: float = 8.0


@dataclass(frozen=True)
class SweepBlock:
    kind: str = "k"
    values: Tuple[float, ...] = (1, 2, 4, 8, 16)
    seeds: Tuple[int, ...] = (0, 1, 2)
    snapshots_per_sample: int = 1
    model_dir: Optional[str] = None


@dataclass(frozen=True)
class InferBlock:
    model_dir: str = "model"
    sample_index: int = 0
    i_t: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    task: Optional[str] = None
    seed: int = 0
    output: str = "out"
    data: DataConfig = DataConfig()
    model: ModelBlock = ModelBlock()
    quantizer: QuantizerBlock = QuantizerBlock()
    network: NetworkBlock = NetworkBlock()
    latency: LatencyBlock = LatencyBlock()
    protocol: ProtocolBlock = ProtocolBlock()
    sweep: SweepBlock = SweepBlock()
    infer: InferBlock = InferBlock()

    def train_config(self, **overrides) -> TrainConfig:
        m, q = self.model, self.quantizer
        kw = dict(
            n_nodes=m.n_nodes,
            epochs=m.epochs,
            learning_rate=m.learning_rate,
            batch_size=m.batch_size,
            encoder_hidden=tuple(m.encoder_hidden),
            decoder_hidden=tuple(m.decoder_hidden),
            diversity=m.diversity,
            shared_fraction=m.shared_fraction,
            private_size=m.private_size,
            encoder_epochs=m.encoder_epochs,
            splits=q.splits,
            sub_dim=q.sub_dim,
            codebook_size=q.codebook_size,
            beta=q.beta,
            codebook_init=q.codebook_init,
        )
        kw.update(overrides)
        return TrainConfig(**kw)

    def latency_config(self, K: int, b1: float, p: Optional[float] = None) -> LatencyConfig:
        """Latency parameters for ``K`` nodes; ``b1`` is used unless the
        latency block pins it explicitly."""
        lat = self.latency
        tau = lat.tau_ms
        tau_p = tuple(tau) if isinstance(tau, (list, tuple)) else (float(tau),) * K
        if len(tau_p) != K:
            raise ConfigError(f"latency.tau_ms lists {len(tau_p)} delays for {K} nodes")
        b2 = 16.0 * self.data.n_classes if lat.include_response else 0.0
        return LatencyConfig(
            tau_p=tau_p,
            b1=lat.b1 if lat.b1 is not None else b1,
            b2=b2,
            p=self.network.p if p is None else p,
            dist=self.network.capacity,
        )


def _tuple(v):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"expected a list, got {v!r}")
    return tuple(v)


def _capacity(raw):
    return _strict(CapacityDistribution, raw, "network.capacity", table=_tuple)


def _grid(raw):
    return tuple(_strict(GridCell, cell, f"latency.grid[{k}]") for k, cell in enumerate(_tuple(raw)))


def parse_config(raw: Dict[str, Any], task: Optional[str] = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    blocks = {
        "data": lambda v: _strict(DataConfig, v, "data"),
        "model": lambda v: _strict(
            ModelBlock, v, "model", encoder_hidden=_tuple, decoder_hidden=_tuple
        ),
        "quantizer": lambda v: _strict(QuantizerBlock, v, "quantizer"),
        "network": lambda v: _strict(NetworkBlock, v, "network", capacity=_capacity),
        "latency": lambda v: _strict(LatencyBlock, v, "latency", grid=_grid),
        "protocol": lambda v: _strict(ProtocolBlock, v, "protocol"),
        "sweep": lambda v: _strict(SweepBlock, v, "sweep", values=_tuple, seeds=_tuple),
        "infer": lambda v: _strict(InferBlock, v, "infer"),
    }
    unknown = sorted(set(raw) - set(blocks) - {"task", "seed", "output"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    kw = {name: conv(raw[name]) for name, conv in blocks.items() if name in raw}
    cfg = ExperimentConfig(
        task=raw.get("task"), seed=raw.get("seed", 0), output=raw.get("output", "out"), **kw
    )
    if task is not None:
        if cfg.task is not None and cfg.task != task:
            raise ConfigError(f"config is for task {cfg.task!r}, not {task!r}")
        cfg = replace(cfg, task=task)
    validate(cfg)
    return cfg


def load_config(path, task: Optional[str] = None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw, task)


def validate(cfg: ExperimentConfig) -> None:
    """Check every block against the preconditions of the code that uses it."""
    if cfg.task is not None and cfg.task not in TASKS:
        raise ConfigError(f"unknown task {cfg.task!r}")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    d = cfg.data
    if d.n_features < 1 or d.n_classes < 2 or d.components_per_class < 1:
        raise ConfigError("data: need n_features >= 1, n_classes >= 2, components_per_class >= 1")
    if min(d.n_train, d.n_val, d.n_test) < d.n_classes:
        raise ConfigError("data: every split needs at least one sample per class")
    try:
        cfg.train_config().validate()
    except ValueError as exc:
        raise ConfigError(f"model/quantizer: {exc}") from exc
    if cfg.protocol.algorithm not in ("algo1", "algo2"):
        raise ConfigError(f"protocol.algorithm must be algo1 or algo2, got {cfg.protocol.algorithm!r}")
    if cfg.protocol.rho < 0:
        raise ConfigError("protocol.rho must be nonnegative")
    if not 0.0 <= cfg.network.p <= 1.0:
        raise ConfigError("network.p must lie in [0, 1]")
    lat = cfg.latency
    if lat.trials < 1 or lat.grid_points < 2 or not 1 <= lat.partitions < 100_000:
        raise ConfigError("latency: trials >= 1, grid_points >= 2 and partitions in [1, 100000) required")
    taus = lat.tau_ms if isinstance(lat.tau_ms, (list, tuple)) else [lat.tau_ms]
    if not taus or any(not isinstance(t, (int, float)) or t <= 0 for t in taus):
        raise ConfigError("latency.tau_ms must be a positive number or list of them")
    for cell in lat.grid:
        if not 0.0 <= cell.p <= 1.0 or cell.b1 < 1 or cell.k < 1:
            raise ConfigError(f"latency.grid cell {cell} is invalid")
        if isinstance(lat.tau_ms, (list, tuple)) and len(lat.tau_ms) != cell.k:
            raise ConfigError("latency.tau_ms list length must match every grid cell's k")
    if lat.b1 is not None and lat.b1 < 1:
        raise ConfigError("latency.b1 must be at least one bit")
    sw = cfg.sweep
    if sw.kind not in ("k", "bits", "p"):
        raise ConfigError(f"sweep.kind must be k, bits or p, got {sw.kind!r}")
    if cfg.task is not None and cfg.task.startswith("sweep-") and cfg.task != f"sweep-{sw.kind}":
        raise ConfigError(f"task {cfg.task!r} disagrees with sweep.kind {sw.kind!r}")
    if len(sw.seeds) < 3:
        raise ConfigError("sweep.seeds needs at least three seeds")
    if not sw.values:
        raise ConfigError("sweep.values must not be empty")
    if sw.snapshots_per_sample < 1:
        raise ConfigError("sweep.snapshots_per_sample must be >= 1")
    if sw.kind == "bits" and sw.model_dir:
        raise ConfigError("sweep-bits retrains per point and cannot use sweep.model_dir")
    if sw.kind == "k" and any(int(v) != v or v < 1 for v in sw.values):
        raise ConfigError("sweep-k values must be positive integers")
    if sw.kind == "p" and any(not 0.0 <= v <= 1.0 for v in sw.values):
        raise ConfigError("sweep-p values must lie in [0, 1]")
    if sw.kind == "bits" and any(int(v) != v or v < 0 or v > 16 for v in sw.values):
        raise ConfigError("sweep-bits values are log2 codebook sizes in [0, 16]")
    if cfg.infer.sample_index < 0 or cfg.infer.sample_index >= d.n_test:
        raise ConfigError("infer.sample_index must index the test split")
    if not 0 <= cfg.infer.i_t < cfg.model.n_nodes:
        raise ConfigError("infer.i_t must be a node index")
