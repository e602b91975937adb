import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from edge_ensembles.numerics import (
    Bernoulli,
    Normal,
    Rayleigh,
    RngStream,
    Uniform,
    cross_entropy,
    cross_entropy_grad_logits,
    rayleigh_cdf,
    rayleigh_quantile,
    rng_draws,
    softmax,
)


def test_softmax_symmetric():
    assert np.array_equal(softmax(np.array([0.0, 0.0])), [0.5, 0.5])


def test_softmax_large_logits_do_not_overflow():
    out = softmax(np.array([1000.0, 0.0]))
    assert out[0] == 1.0
    assert 0.0 <= out[1] < 1e-300 or out[1] == 0.0


def test_softmax_matches_extended_precision():
    mpmath.mp.dps = 50
    x = [1, 2, 3]
    den = sum(mpmath.e**v for v in x)
    ref = [float(mpmath.e**v / den) for v in x]
    assert np.max(np.abs(softmax(np.array(x, dtype=float)) - ref)) <= 1e-12


@pytest.mark.parametrize("bad", [[np.nan, 0.0], [np.inf, 1.0]])
def test_softmax_rejects_non_finite(bad):
    with pytest.raises(ValueError, match="non-finite logits"):
        softmax(np.array(bad))


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=2, max_size=8),
    st.floats(-100, 100),
)
def test_softmax_shift_invariance(logits, c):
    x = np.array(logits)
    assert np.max(np.abs(softmax(x + c) - softmax(x))) <= 1e-12


def test_cross_entropy_examples():
    assert cross_entropy(np.array([0.0, 1.0, 0.0]), 1) == pytest.approx(0.0, abs=1e-11)
    for label in range(4):
        assert cross_entropy(np.full(4, 0.25), label) == pytest.approx(math.log(4), rel=1e-11)
    assert cross_entropy(np.array([0.7, 0.2, 0.1]), 1) == pytest.approx(-math.log(0.2), rel=1e-10)


def test_cross_entropy_zero_probability_is_finite():
    assert cross_entropy(np.array([1.0, 0.0]), 1) == pytest.approx(-math.log(1e-12))


@pytest.mark.parametrize("label", [-1, 3])
def test_cross_entropy_label_range(label):
    with pytest.raises(ValueError):
        cross_entropy(np.full(3, 1 / 3), label)


def test_cross_entropy_batch():
    P = np.array([[0.5, 0.5], [0.9, 0.1]])
    out = cross_entropy(P, np.array([0, 1]))
    assert np.allclose(out, [-math.log(0.5 + 1e-12), -math.log(0.1 + 1e-12)], rtol=1e-14)


def test_cross_entropy_grad_matches_finite_differences():
    rng = RngStream(3)
    z = rng.normal((5, 4))
    y = np.array([0, 1, 2, 3, 1])
    g = cross_entropy_grad_logits(softmax(z), y)
    h = 1e-6
    num = np.zeros_like(z)
    for i in range(5):
        for k in range(4):
            zp, zm = z.copy(), z.copy()
            zp[i, k] += h
            zm[i, k] -= h
            num[i, k] = (cross_entropy(softmax(zp[i]), y[i]) - cross_entropy(softmax(zm[i]), y[i])) / (2 * h)
    assert np.max(np.abs(g - num)) < 1e-8


def test_bernoulli_extremes():
    assert np.all(rng_draws(RngStream(0), Bernoulli(0.0), 100) == 0)
    assert np.all(rng_draws(RngStream(0), Bernoulli(1.0), 100) == 1)


def test_rayleigh_mean():
    x = rng_draws(RngStream(11), Rayleigh(1.0), 10**6)
    assert abs(x.mean() - math.sqrt(math.pi / 2)) <= 0.01 * math.sqrt(math.pi / 2)
    assert np.all(x > 0)


@pytest.mark.parametrize(
    "make", [lambda: Bernoulli(1.5), lambda: Bernoulli(-0.1), lambda: Rayleigh(0.0),
             lambda: Uniform(1.0, 1.0), lambda: Normal(0.0, -1.0)]
)
def test_invalid_distribution_parameters(make):
    with pytest.raises(ValueError):
        make()


def test_rng_draws_negative_count():
    with pytest.raises(ValueError):
        rng_draws(RngStream(0), Uniform(), -1)


def test_rayleigh_cdf_against_integrated_density():
    sigma = 1.3
    pdf = lambda t: t / sigma**2 * math.exp(-t * t / (2 * sigma**2))
    for x in np.linspace(0.1, 5.0, 10):
        ref, _ = quad(pdf, 0.0, x, epsabs=1e-13, epsrel=1e-13, limit=200)
        assert abs(float(rayleigh_cdf(x, sigma)) - ref) <= 1e-9


def test_rayleigh_cdf_zero_below_support_and_quantile_inverse():
    assert float(rayleigh_cdf(0.0)) == 0.0
    assert float(rayleigh_cdf(-3.0)) == 0.0
    for q in (0.01, 0.5, 0.99):
        assert float(rayleigh_cdf(rayleigh_quantile(q, 2.0), 2.0)) == pytest.approx(q, rel=1e-12)


def test_stream_determinism_and_position_reconstruction():
    a = RngStream(42)
    first = a.uniform(7)
    rest = a.normal((3,))
    assert a.position == 10
    b = RngStream(42)
    assert np.array_equal(b.uniform(7), first)
    assert np.array_equal(RngStream(42, position=7).normal((3,)), rest)


def test_every_draw_consumes_one_position():
    s = RngStream(5)
    s.draws(Rayleigh(), 4)
    s.draws(Bernoulli(0.3), 5)
    s.permutation(6)
    assert s.position == 15


def test_spawn_is_seed_offset():
    assert np.array_equal(RngStream(10).spawn(3).uniform(4), RngStream(13).uniform(4))


def test_open_uniform_excludes_endpoints():
    u = RngStream(0).open_uniform(10**5)
    assert u.min() > 0.0 and u.max() < 1.0


def test_permutation_is_a_permutation():
    assert sorted(RngStream(1).permutation(50).tolist()) == list(range(50))
