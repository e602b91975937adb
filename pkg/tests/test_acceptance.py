"""Acceptance criteria, one test each.

Each test prints a single ``ACn PASS|FAIL ...`` line (also when run as a
script: ``python tests/test_acceptance.py``) and then asserts the criterion.
"""
import json
import math
import sys
import time

import mpmath
import numpy as np
import pytest

from edge_ensembles.cli import cli_main
from edge_ensembles.config import parse_config
from edge_ensembles.harness import CELL_STREAM, EVAL_STREAM, TRAIN_STREAM, evaluate, run_sweep
from edge_ensembles.latency import (
    LatencyConfig,
    closed_form_cdf,
    default_eps_grid,
    monte_carlo_cdf,
    t_max_bound,
)
from edge_ensembles.models import (
    DataConfig,
    Ensemble,
    TrainConfig,
    grad_check,
    make_grad_fixture,
    make_synthetic_task,
    train_ensemble,
)
from edge_ensembles.network import CapacityDistribution
from edge_ensembles.numerics import RngStream
from edge_ensembles.protocol import aggregation_weights
from edge_ensembles.quantizer import Codebook, quantize

SEEDS = range(5)
_capture = None


@pytest.fixture(autouse=True)
def _terminal(capsys):
    global _capture
    _capture = capsys
    yield
    _capture = None


def report(name, ok, detail):
    line = f"{name} {'PASS' if ok else 'FAIL'} {detail}"
    if _capture is not None:
        with _capture.disabled():
            print("\n" + line)
    else:
        print(line)
    assert ok, line


# --------------------------------------------------------------------------


def test_ac1_closed_form_matches_monte_carlo():
    start = time.perf_counter()
    ray = CapacityDistribution.rayleigh(1.0)
    cells = [(p, b, k) for p in (0.2, 0.8) for b in (32, 128) for k in (4, 64)]
    worst, shape_ok = 0.0, True
    shared = np.linspace(630.0, 1400.0, 256)
    closed_shared = {}
    for n, (p, b, k) in enumerate(cells):
        cfg = LatencyConfig.homogeneous(k, tau=700.0, b1=b, p=p, dist=ray)
        eps = default_eps_grid(cfg, 256)
        closed = closed_form_cdf(cfg, 0, eps)
        mc = monte_carlo_cdf(cfg, 0, eps, 10**6, RngStream(0).spawn(n * CELL_STREAM))
        worst = max(worst, float(np.max(np.abs(closed - mc.prob))))
        shape_ok &= bool(np.all(closed[eps <= 700.0] == 0.0) and np.all(mc.prob[eps <= 700.0] == 0.0))
        shape_ok &= bool(np.all(np.diff(closed) >= 0))
        closed_shared[p, b, k] = closed_form_cdf(cfg, 0, shared)
    for p, b, k in cells:
        c = closed_shared[p, b, k]
        if p == 0.2:
            shape_ok &= bool(np.all(closed_shared[0.8, b, k] <= c))
        if b == 32:
            shape_ok &= bool(np.all(closed_shared[p, 128, k] <= c))
        if k == 4:
            shape_ok &= bool(np.all(closed_shared[p, b, 64] <= c))
    elapsed = time.perf_counter() - start
    ok = worst <= 0.01 and elapsed <= 60.0 and shape_ok
    report("AC1", ok, f"sup|closed-mc|={worst:.4f} (<=0.01) runtime={elapsed:.1f}s (<=60) shape_checks={shape_ok}")


def test_ac2_exact_zero_plateau():
    rng = RngStream(2024)
    fams = [CapacityDistribution.rayleigh(1.0), CapacityDistribution.truncated_rayleigh(1.0, 0.3),
            CapacityDistribution.constant(0.7), CapacityDistribution.empirical([0.2, 0.9, 2.5])]
    bad = 0
    for n in range(100):
        K = 1 + int(rng.uniform(1)[0] * 64)
        tau = tuple(1.0 + 1999.0 * rng.uniform(K))
        i_t = int(rng.uniform(1)[0] * K)
        cfg = LatencyConfig(tau_p=tau, b1=1 + 255 * float(rng.uniform(1)[0]), p=float(rng.uniform(1)[0]),
                            dist=fams[n % 4])
        t = tau[i_t]
        eps = np.concatenate([np.linspace(1e-6, t, 200), [t, np.nextafter(t, 0.0)]])
        vals = closed_form_cdf(cfg, i_t, eps)
        bad += int(np.count_nonzero(vals != 0.0)) + int(closed_form_cdf(cfg, i_t, t) != 0.0)
    report("AC2", bad == 0, f"nonzero values at eps<=tau_i_t: {bad} over 100 configs")


def test_ac3_cdf_vanishes_as_k_grows():
    lines, ok = [], True
    for dist, c_min in ((CapacityDistribution.truncated_rayleigh(1.0, 0.5), 0.5),
                        (CapacityDistribution.constant(1.0), 1.0)):
        vals = []
        for K in (4, 64, 512, 2048):
            cfg = LatencyConfig.homogeneous(K, tau=10.0, b1=128, p=0.5, dist=dist)
            vals.append(closed_form_cdf(cfg, 0, 0.9 * t_max_bound(cfg, c_min)))
        ok &= all(a > b for a, b in zip(vals, vals[1:])) and vals[-1] < 1e-3
        lines.append(f"{dist.family}: " + ", ".join(f"{v:.3g}" for v in vals))
    report("AC3", ok, "F(0.9*T_max) at K=4,64,512,2048 -> " + "; ".join(lines))


def _oracle(vectors, rows):
    out = []
    for r in rows:
        best, best_d = 0, math.inf
        for k, e in enumerate(vectors):
            d = 0.0
            for a, b in zip(r, e):
                d += (a - b) * (a - b)
            if d < best_d:
                best, best_d = k, d
        out.append(best)
    return out


def test_ac4_quantizer_matches_exhaustive_argmin():
    rng = RngStream(77)
    mismatches = ties = 0
    for n in range(1000):
        P = 2 ** int(rng.uniform(1)[0] * 7)  # 1..64
        d = 1 + int(rng.uniform(1)[0] * 4)
        m = 1 + int(rng.uniform(1)[0] * 8)
        if n % 2:
            # small-integer codewords and half-integer rows: exact distances, frequent ties
            grid = np.floor(rng.uniform(P * d * 4) * 9).reshape(-1, d)
            vecs = np.unique(grid, axis=0)[:P]
            if len(vecs) < P:
                continue
            vecs = vecs[rng.permutation(P)]
            rows = np.floor(rng.uniform(m * d) * 17).reshape(m, d) / 2.0
            for i in range(m):
                if P > 1 and rng.uniform(1)[0] < 0.5:
                    a, b = rng.permutation(P)[:2]
                    rows[i] = (vecs[a] + vecs[b]) / 2.0
        else:
            vecs = rng.normal((P, d))
            rows = rng.normal((m, d))
        cb = Codebook(vecs, m)
        got = quantize(cb, rows).indices.tolist()
        ref = _oracle(vecs.tolist(), rows.tolist())
        mismatches += int(got != ref)
        dist = ((rows[:, None, :] - vecs[None]) ** 2).sum(-1)
        ties += int(np.sum((dist == dist.min(1, keepdims=True)).sum(1) > 1))
    ok = mismatches == 0 and ties > 0
    report("AC4", ok, f"mismatched instances={mismatches}/1000, exact-tie rows exercised={ties}")


def test_ac5_gradient_fidelity():
    dec, enc = [], []
    for s in range(20):
        fx = make_grad_fixture(RngStream(500 + s))
        dec.append(grad_check(fx, "decoder"))
        enc.append(grad_check(fx, "encoder"))
    ok = max(dec) <= 1e-6 and max(enc) <= 1e-4
    report("AC5", ok, f"max rel err decoder={max(dec):.2e} (<=1e-6) encoder={max(enc):.2e} (<=1e-4)")


def test_ac6_training_loss_halves():
    ratios = []
    for seed in SEEDS:
        train, val, _ = make_synthetic_task(DataConfig(), RngStream(seed))
        _, hist = train_ensemble(train, val, TrainConfig(), RngStream(seed + TRAIN_STREAM))
        ratios.append(hist.total_loss[-1] / hist.total_loss[0])
    worst = float(np.max(ratios))
    report("AC6", worst <= 0.5, f"max final/initial L_tot over nodes and seeds={worst:.3f} (<=0.5)")


def test_ac7_ensemble_gain():
    ks = [1, 2, 4, 8, 16]
    cfg = parse_config({"task": "sweep-k", "model": {"n_nodes": 16},
                        "sweep": {"kind": "k", "values": ks, "seeds": list(SEEDS)}})
    start = time.perf_counter()
    res = run_sweep(cfg)
    elapsed = time.perf_counter() - start
    solo = []
    for seed in SEEDS:
        train, val, test = make_synthetic_task(cfg.data, RngStream(seed))
        ens, _ = train_ensemble(train, val, cfg.train_config(n_nodes=16), RngStream(seed + TRAIN_STREAM))
        quant, _ = ens.node_probabilities(test.X)
        solo.append((quant.argmax(-1) == test.y).mean())
    curve = np.array(res.mean_accuracy)
    drops = [curve[i] - curve[i + 1] for i in range(len(ks) - 1) if curve[i + 1] < curve[i]]
    monotone = len(drops) <= 1 and all(d <= 0.005 for d in drops)
    gain = curve[-1] - float(np.mean(solo))
    ok = gain > 0 and monotone and elapsed <= 300
    report("AC7", ok, f"acc(K)={np.round(curve, 4).tolist()} solo={np.mean(solo):.4f} "
           f"gain={100 * gain:+.2f}pp inversions={len(drops)} sweep_runtime={elapsed:.0f}s (<=300)")


def test_ac8_algorithm2_at_one_bit():
    a1, a2, raw = [], [], []
    for seed in SEEDS:
        train, val, test = make_synthetic_task(DataConfig(), RngStream(seed))
        ens, _ = train_ensemble(train, val, TrainConfig(n_nodes=8, codebook_size=2), RngStream(seed + TRAIN_STREAM))
        lat = LatencyConfig.homogeneous(8, b1=16)
        a1.append(evaluate(ens, test, "algo1", 8.0, lat, 1.0, RngStream(seed + EVAL_STREAM))[0])
        a2.append(evaluate(ens, test, "algo2", 8.0, lat, 1.0, RngStream(seed + EVAL_STREAM))[0])
        _, r = ens.node_probabilities(test.X)
        raw.append((r.argmax(-1) == test.y).mean())
    m1, m2, mr = np.mean(a1), np.mean(a2), np.mean(raw)
    ok = m2 >= m1 and m2 >= mr - 0.005
    report("AC8", ok, f"algo1={m1:.4f} algo2={m2:.4f} raw_solo={mr:.4f} "
           f"(algo2-algo1={100 * (m2 - m1):+.2f}pp, algo2-raw={100 * (m2 - mr):+.2f}pp >= -0.5pp)")


def test_ac9_weight_formula():
    mpmath.mp.dps = 60
    rng = RngStream(9)
    worst, k1_exact = 0.0, True
    for n in range(100):
        K = 1 + n % 16
        V = 0.01 + 0.99 * rng.uniform(K)
        got = aggregation_weights(V, rho=8, K=K)
        Vm = [mpmath.mpf(float(v)) for v in V]
        s = sum(v**8 for v in Vm)
        hat = [v**8 / s for v in Vm]
        root = mpmath.sqrt(K)
        Z = Vm[0] + sum(hat[1:]) / root
        ref = [Vm[0] / Z] + [h / (root * Z) for h in hat[1:]]
        worst = max(worst, max(abs(float(r - mpmath.mpf(float(g)))) for r, g in zip(ref, got)))
        if K == 1:
            k1_exact &= got.tolist() == [1.0]
    ok = worst <= 1e-12 and k1_exact
    report("AC9", ok, f"max |alpha - mp| = {worst:.2e} (<=1e-12), K=1 exactly 1: {k1_exact}")


def test_ac10_determinism_and_round_trips(tmp_path):
    grid = [{"p": 0.8, "b1": 32, "k": 4}, {"p": 0.2, "b1": 128, "k": 64}]
    base = {"seed": 5, "data": {"n_train": 200, "n_val": 80, "n_test": 40},
            "model": {"n_nodes": 3, "epochs": 3},
            "latency": {"trials": 20000, "grid": grid},
            "sweep": {"kind": "p", "values": [0, 0.5, 1], "seeds": [0, 1, 2]}}
    (tmp_path / "c.json").write_text(json.dumps(base))
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        for cmd in ("latency-cdf", "sweep", "train"):
            assert cli_main([cmd, "--config", str(tmp_path / "c.json"), "--out", str(out)]) == 0
        outputs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    identical = outputs[0] == outputs[1] and len(outputs[0]) >= 10
    ens = Ensemble.load(tmp_path / "a" / "model")
    ens.save(tmp_path / "resaved")
    model_files = [p for p in (tmp_path / "a" / "model").iterdir()]
    round_trip = all((tmp_path / "resaved" / p.name).read_bytes() == p.read_bytes() for p in model_files)
    cb = ens.encoder.codebook
    round_trip &= Codebook.from_bytes(cb.to_bytes()).vectors.tobytes() == cb.vectors.tobytes()
    ok = identical and round_trip
    report("AC10", ok, f"{len(outputs[0])} output files bit-identical across runs: {identical}; "
           f"model/codebook round-trip bit-exact: {round_trip}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
