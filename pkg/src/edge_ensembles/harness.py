"""Experiment drivers: latency CDF tables and accuracy sweeps."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import ExperimentConfig, GridCell
from .latency import (
    LatencyConfig,
    closed_form_cdf,
    default_eps_grid,
    monte_carlo_cdf,
    round_delay,
    write_cdf_csv,
)
from .models import Dataset, Ensemble, make_synthetic_task, train_ensemble
from .network import sample_snapshot
from .numerics import RngStream
from .protocol import combine
from .quantizer import bit_budget

log = logging.getLogger(__name__)

# offsets separating the streams derived from one seed
TRAIN_STREAM = 1_000_003
EVAL_STREAM = 2_000_003
# cells of a latency grid; partitions of one cell add 0, 1, 2, ...
CELL_STREAM = 100_000

SWEEP_COLUMNS = {"k": "K", "bits": "bits", "p": "p"}


@dataclass(frozen=True)
class SweepResult:
    kind: str
    x: Tuple[float, ...]
    mean_accuracy: Tuple[float, ...]
    std_accuracy: Tuple[float, ...]
    mean_delay_ms: Tuple[float, ...]
    per_seed: np.ndarray  # (seeds, points)

    def rows(self) -> List[Tuple[float, float, float, float]]:
        return list(zip(self.x, self.mean_accuracy, self.std_accuracy, self.mean_delay_ms))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def emit_csv(result: SweepResult, path=None) -> str:
    """Render a sweep as CSV text (and write it to ``path`` if given)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([SWEEP_COLUMNS[result.kind], "mean_accuracy", "std_accuracy", "mean_delay_ms"])
    for x, *rest in result.rows():
        w.writerow([_fmt(int(x)) if result.kind != "p" else _fmt(float(x))] + [_fmt(float(v)) for v in rest])
    text = buf.getvalue()
    if path is not None:
        try:
            Path(path).write_text(text, encoding="utf-8", newline="")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return text


def evaluate(
    ensemble: Ensemble,
    test: Dataset,
    algorithm: str,
    rho: float,
    lat: LatencyConfig,
    p: float,
    rng: RngStream,
    snapshots_per_sample: int = 1,
) -> Tuple[float, float]:
    """Accuracy and mean round delay over every (test sample, inferring user)
    pair, drawing ``snapshots_per_sample`` network snapshots per pair."""
    K = ensemble.K
    quant, raw = ensemble.node_probabilities(test.X)
    v_raw = [nd.val_acc_raw for nd in ensemble.nodes]
    v_quant = [nd.val_acc_quant for nd in ensemble.nodes]
    lat = replace(lat, p=p)
    hits = 0
    delay = 0.0
    total = 0
    for s in range(len(test)):
        q_s = quant[:, s]
        for i_t in range(K):
            for _ in range(snapshots_per_sample):
                snap = sample_snapshot(K, p, lat.dist, rng)
                participants = np.flatnonzero(snap.links[i_t]).tolist()
                pred, _, _ = combine(
                    algorithm, i_t, participants, q_s, raw[i_t, s], v_raw, v_quant, rho
                )
                hits += int(pred == test.y[s])
                delay += round_delay(snap, lat, i_t)
                total += 1
    return hits / total, delay / total


def _lat_for(cfg: ExperimentConfig, ensemble: Ensemble) -> LatencyConfig:
    return cfg.latency_config(ensemble.K, float(bit_budget(ensemble.encoder.codebook)))


def node_groups(ensemble: Ensemble, k: int) -> List[Ensemble]:
    """Split the nodes into ``len // k`` disjoint ensembles of ``k`` nodes
    (node order kept; leftover nodes unused)."""
    n = ensemble.K // k
    return [
        Ensemble(ensemble.encoder, ensemble.nodes[g * k:(g + 1) * k], ensemble.n_classes, ensemble.beta)
        for g in range(n)
    ]


def run_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Accuracy versus ensemble size, bit budget or link probability.

    Per seed the task is regenerated and an ensemble trained, unless
    ``sweep.model_dir`` names a saved ensemble: then that ensemble and the
    task of ``cfg.seed`` are reused and seeds only vary the network draws.
    A size-``k`` point of an ensemble sweep averages every disjoint group of
    ``k`` trained nodes, so small ensembles are not judged on the first nodes
    alone. Point ``b`` of seed ``s`` evaluates with its own stream, so points
    can be computed in any order. The reported standard deviation is across seeds.
    """
    sw, proto = cfg.sweep, cfg.protocol
    values = [float(v) for v in sw.values]
    acc = np.zeros((len(sw.seeds), len(values)))
    dly = np.zeros_like(acc)
    saved = Ensemble.load(sw.model_dir) if sw.model_dir else None
    for a, seed in enumerate(sw.seeds):
        train, val, test = make_synthetic_task(cfg.data, RngStream(cfg.seed if saved else seed))
        if saved is not None and (
            saved.encoder.in_dim != test.X.shape[1] or saved.n_classes != test.n_classes
        ):
            raise ValueError(f"ensemble in {sw.model_dir} does not match the configured data")

        def ensembles_for(point: float) -> List[Ensemble]:
            if sw.kind == "bits":
                tc = cfg.train_config(codebook_size=2 ** int(point))
                return [train_ensemble(train, val, tc, RngStream(seed + TRAIN_STREAM))[0]]
            K = int(max(values)) if sw.kind == "k" else cfg.model.n_nodes
            if saved is not None:
                full = saved
            elif cache:
                full = cache[0]
            else:
                full = train_ensemble(train, val, cfg.train_config(n_nodes=K), RngStream(seed + TRAIN_STREAM))[0]
                cache.append(full)
            if full.K < K:
                raise ValueError(f"sweep needs {K} nodes but the ensemble has {full.K}")
            if sw.kind == "p":
                return [full.subset(K)]
            return node_groups(full.subset(K), int(point))

        cache: List[Ensemble] = []
        for b, v in enumerate(values):
            p = {"p": v, "k": 1.0}.get(sw.kind, cfg.network.p)
            rng = RngStream(seed + EVAL_STREAM + b)
            scores = [
                evaluate(ens, test, proto.algorithm, proto.rho, _lat_for(cfg, ens), p,
                         rng, sw.snapshots_per_sample)
                for ens in ensembles_for(v)
            ]
            acc[a, b], dly[a, b] = np.mean(scores, axis=0)
        log.info("seed %d accuracies %s", seed, np.round(acc[a], 4))
    ddof = 1 if len(sw.seeds) > 1 else 0
    return SweepResult(
        sw.kind,
        tuple(values),
        tuple(acc.mean(0)),
        tuple(acc.std(0, ddof=ddof)),
        tuple(dly.mean(0)),
        acc,
    )


def cdf_filename(p: float, b1: float, k: int) -> str:
    return f"cdf_p{_fmt(float(p))}_b{_fmt(float(b1))}_k{int(k)}.csv"


def run_latency_cdf(cfg: ExperimentConfig, out_dir) -> List[Path]:
    """Closed-form and Monte-Carlo delay CDFs for every grid cell.

    Without an explicit grid a single cell is built from the network and
    latency blocks (``b1`` defaults to the quantizer's bit budget).
    """
    lat = cfg.latency
    q = cfg.quantizer
    cells = list(lat.grid)
    if not cells:
        b1 = lat.b1 if lat.b1 is not None else q.splits * (q.codebook_size.bit_length() - 1)
        cells = [GridCell(cfg.network.p, b1, cfg.model.n_nodes)]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for n, cell in enumerate(cells):
        lc = replace(cfg.latency_config(int(cell.k), float(cell.b1), p=float(cell.p)), b1=float(cell.b1))
        if not 0 <= lat.i_t < lc.K:
            raise ValueError(f"latency.i_t={lat.i_t} is not a user of a {lc.K}-node network")
        eps = default_eps_grid(lc, lat.grid_points)
        closed = closed_form_cdf(lc, lat.i_t, eps)
        mc = monte_carlo_cdf(
            lc, lat.i_t, eps, lat.trials, RngStream(cfg.seed).spawn(n * CELL_STREAM),
            partitions=lat.partitions,
        )
        path = out_dir / cdf_filename(cell.p, cell.b1, cell.k)
        write_cdf_csv(path, eps, closed, mc.prob)
        written.append(path)
    return written
