import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from streamtta.core import DimensionMismatchError, PrototypeSet, SimplexError
from streamtta.zeroshot import (
    ViewEnsembleConfig,
    cosine_logits,
    entropy,
    make_views,
    softmax_probs,
    view_ensemble,
    view_ensemble_probs,
    view_noise,
)

finite = st.floats(-30, 30, allow_nan=False)


def test_cosine_identity_and_antipode(orthonormal_protos):
    e1 = np.array([1.0, 0, 0, 0])
    np.testing.assert_array_equal(cosine_logits(e1, orthonormal_protos), [1, 0, 0, 0])
    np.testing.assert_array_equal(cosine_logits(-e1, orthonormal_protos), [-1, 0, 0, 0])


def test_cosine_matches_pairwise_dot_products(rng):
    protos = PrototypeSet.from_vectors(rng.normal(size=(6, 32)))
    x = rng.normal(size=32)
    x /= np.linalg.norm(x)
    expected = [sum(a * b for a, b in zip(x, p)) for p in protos.vectors]
    np.testing.assert_allclose(cosine_logits(x, protos), expected, rtol=0, atol=1e-12)


def test_cosine_batch_matches_single(rng):
    protos = PrototypeSet.from_vectors(rng.normal(size=(3, 5)))
    xs = rng.normal(size=(7, 5))
    batch = cosine_logits(xs, protos)
    for row, x in zip(batch, xs):
        np.testing.assert_allclose(row, cosine_logits(x, protos), atol=1e-15)


def test_cosine_dimension_mismatch(orthonormal_protos):
    with pytest.raises(DimensionMismatchError):
        cosine_logits(np.ones(3), orthonormal_protos)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3))
def test_cosine_argmax_invariant_to_rescaling(seed, scale):
    rng = np.random.default_rng(seed)
    protos = PrototypeSet.from_vectors(rng.normal(size=(5, 8)))
    x = rng.normal(size=8)
    assert np.argmax(cosine_logits(x, protos)) == np.argmax(cosine_logits(scale * x, protos))


def test_softmax_uniform_and_hand_value():
    np.testing.assert_allclose(softmax_probs([0, 0, 0, 0]), [0.25] * 4, atol=1e-15)
    e = math.e
    expected = [e / (e + 3)] + [1 / (e + 3)] * 3
    np.testing.assert_allclose(expected, [0.47536, 0.17488, 0.17488, 0.17488], atol=1e-5)
    np.testing.assert_allclose(softmax_probs([1, 0, 0, 0]), expected, rtol=1e-14)


@settings(max_examples=60, deadline=None)
@given(logits=arrays(np.float64, st.integers(2, 8), elements=finite), c=st.floats(-100, 100))
def test_softmax_shift_invariance(logits, c):
    np.testing.assert_allclose(softmax_probs(logits + c), softmax_probs(logits), atol=1e-12)


def test_entropy_values():
    assert entropy([1.0, 0, 0, 0]) == 0.0
    np.testing.assert_allclose(entropy([0.25] * 4), math.log(4), rtol=1e-15)
    np.testing.assert_allclose(entropy([0.25] * 4), 1.386294, atol=1e-6)
    np.testing.assert_allclose(entropy([0.5, 0.5, 0, 0]), 0.693147, atol=1e-6)


def test_entropy_rejects_non_simplex():
    with pytest.raises(SimplexError):
        entropy([0.5, 0.6])


@settings(max_examples=80, deadline=None)
@given(logits=arrays(np.float64, st.integers(2, 8), elements=finite))
def test_entropy_maximal_iff_uniform_logits(logits):
    h = entropy(softmax_probs(logits))
    k = logits.size
    assert h <= math.log(k) + 1e-12
    if np.ptp(logits) < 1e-12:
        assert h == pytest.approx(math.log(k), abs=1e-12)
    elif np.ptp(logits) > 1e-6:
        assert h < math.log(k) - 1e-14


def test_view_config_validation_and_kept_count():
    assert ViewEnsembleConfig(8, 0.5).num_kept == 4
    assert ViewEnsembleConfig(5, 0.5).num_kept == 3
    assert ViewEnsembleConfig(3, 0.01).num_kept == 1
    for bad in [dict(num_views=0), dict(keep_fraction=0.0), dict(keep_fraction=1.5), dict(view_noise_sigma=-1)]:
        with pytest.raises(ValueError):
            ViewEnsembleConfig(**bad)


def test_ensemble_full_keep_is_plain_mean(rng):
    views = rng.dirichlet(np.ones(4), size=6)
    out = view_ensemble(views, ViewEnsembleConfig(6, 1.0))
    np.testing.assert_allclose(out, views.mean(axis=0), atol=1e-15)


def test_ensemble_single_view_unchanged():
    v = np.array([[0.1, 0.2, 0.7]])
    np.testing.assert_allclose(view_ensemble(v, ViewEnsembleConfig(1, 0.5)), v[0], atol=1e-16)


def _probs_with_entropy(target, k=4):
    """A distribution (a, b, b, b) whose entropy equals ``target``, by bisection."""
    lo, hi = 1.0 / k, 1.0
    for _ in range(200):
        a = 0.5 * (lo + hi)
        p = np.array([a] + [(1 - a) / (k - 1)] * (k - 1))
        if entropy(p) > target:
            lo = a
        else:
            hi = a
    return p


def test_ensemble_keeps_lowest_entropy_half():
    ents = [1.0, 0.1, 1.2, 0.2]
    views = np.array([_probs_with_entropy(h) for h in ents])
    np.testing.assert_allclose([entropy(v) for v in views], ents, atol=1e-12)
    expected = 0.5 * (views[1] + views[3])
    np.testing.assert_allclose(view_ensemble(views, ViewEnsembleConfig(4, 0.5)), expected, atol=1e-15)


def test_ensemble_shape_errors():
    with pytest.raises(ValueError, match="config expects"):
        view_ensemble(np.full((3, 2), 0.5), ViewEnsembleConfig(4, 0.5))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 10), rho=st.floats(0.05, 1.0))
def test_ensemble_output_on_simplex(seed, m, rho):
    rng = np.random.default_rng(seed)
    out = view_ensemble(rng.dirichlet(np.ones(5), size=m), ViewEnsembleConfig(m, rho))
    assert np.all(out >= 0)
    assert abs(out.sum() - 1) < 1e-12


def test_views_zero_noise_identical(rng):
    x = rng.normal(size=6)
    views = make_views(x, ViewEnsembleConfig(5, 0.5, 0.0), seed=3)
    np.testing.assert_array_equal(views, np.repeat(x[None], 5, axis=0))


def test_views_deterministic_and_norm_preserving(rng):
    x = rng.normal(size=6)
    cfg = ViewEnsembleConfig(8, 0.5, 0.1)
    a, b = make_views(x, cfg, seed=11), make_views(x, cfg, seed=11)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a[0], x)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), np.linalg.norm(x), rtol=1e-14)
    assert not np.array_equal(a, make_views(x, cfg, seed=12))


def test_view_noise_std_matches_sigma():
    sigma = 0.05
    noise = view_noise(ViewEnsembleConfig(2, 0.5, sigma), 100_000, seed=0)
    assert abs(noise.std() / sigma - 1) < 0.02


def test_single_view_ensemble_equals_zero_shot(rng):
    protos = PrototypeSet.from_vectors(rng.normal(size=(4, 8)))
    x = rng.normal(size=8)
    out = view_ensemble_probs(x, protos, ViewEnsembleConfig(1, 0.5, 0.3), seed=0)
    np.testing.assert_allclose(out, softmax_probs(cosine_logits(x, protos)), atol=1e-16)
