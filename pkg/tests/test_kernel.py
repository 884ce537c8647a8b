import logging
import timeit

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detbeam.core import BeamSet, Hypothesis, Vocabulary, extend_beam, root
from detbeam.decode import DecodeConfig, decode_set
from detbeam.kernel import (
    DE_EN,
    CellCounter,
    GramCache,
    KernelParams,
    gram_matrix,
    gram_update_incremental,
    kernel_fast,
    kernel_naive,
    kernel_normalized,
)

from conftest import random_markov

A, B, C, D = 2, 3, 4, 5
tokens = st.lists(st.integers(0, 3), max_size=12)


def test_params_validation():
    assert DE_EN == KernelParams(2, 0.1)
    for bad in [(0, 0.5), (2, 0.0), (2, 1.5), (1.5, 0.5)]:
        with pytest.raises(ValueError):
            KernelParams(*bad)


@pytest.mark.parametrize("fn", [kernel_naive, kernel_fast])
def test_hand_examples(fn):
    assert fn((A, B), (A, B), KernelParams(2, 1.0)) == pytest.approx(1.0, abs=1e-15)
    assert fn((A, B, C), (A, C), KernelParams(2, 0.5)) == pytest.approx(0.5**5, abs=1e-15)
    assert fn((A, B), (C, D), KernelParams(2, 0.7)) == 0.0
    assert fn((A,), (A, B), KernelParams(2, 0.7)) == 0.0


@settings(max_examples=300, deadline=None)
@given(tokens, tokens, st.integers(1, 4), st.sampled_from([0.1, 0.5, 1.0]))
def test_fast_matches_naive(s, t, n, lam):
    p = KernelParams(n, lam)
    naive = kernel_naive(s, t, p)
    assert abs(kernel_fast(s, t, p) - naive) <= 1e-10 * max(1.0, naive)


@settings(max_examples=200, deadline=None)
@given(tokens, tokens, st.integers(1, 3), st.floats(0.05, 1.0))
def test_symmetry_is_exact(s, t, n, lam):
    p = KernelParams(n, lam)
    assert kernel_fast(s, t, p) == kernel_fast(t, s, p)
    assert kernel_normalized(s, t, p) == kernel_normalized(t, s, p)


def test_strictly_increasing_in_lambda():
    s, t = (A, B, C, A, D), (B, A, C, D)
    vals = [kernel_naive(s, t, KernelParams(2, lam)) for lam in np.linspace(0.05, 1.0, 20)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_long_pair_is_fast():
    rng = np.random.default_rng(0)
    s, t = tuple(rng.integers(0, 20, 30)), tuple(rng.integers(0, 20, 30))
    p = KernelParams(2, 0.5)
    val = kernel_fast(s, t, p)
    assert np.isfinite(val) and val > 0
    per_call = min(timeit.repeat(lambda: kernel_fast(s, t, p), number=50, repeat=5)) / 50
    assert per_call < 1e-3


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=10), st.integers(1, 3), st.floats(0.05, 1.0))
def test_self_kernel_positive(s, n, lam):
    if len(s) >= n:
        assert kernel_fast(s, s, KernelParams(n, lam)) > 0


def test_normalized_examples():
    p = KernelParams(2, 0.5)
    assert kernel_normalized((A, B, C), (A, B, C), p) == 1.0
    kss = kernel_naive((A, B, C), (A, B, C), p)
    expected = 0.5**5 / np.sqrt(kss * 0.5**4)
    np.testing.assert_allclose(kernel_normalized((A, B, C), (A, C), p), expected, rtol=1e-12)
    assert kernel_normalized((A, B), (C, D), p) == 0.0
    # strings shorter than n: only an identical string is similar
    assert kernel_normalized((A,), (A,), p) == 1.0
    assert kernel_normalized((A,), (B,), p) == 0.0
    assert kernel_normalized((A,), (A, B), p) == 0.0


def test_gram_examples():
    p = KernelParams(2, 0.3)
    np.testing.assert_array_equal(gram_matrix([(A, B, C)] * 4, p), np.ones((4, 4)))
    np.testing.assert_array_equal(gram_matrix([(A, B), (C, D), (B, B)], p), np.eye(3))


@pytest.mark.parametrize("seed", range(10))
def test_gram_is_psd_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    strings = [tuple(rng.integers(0, 4, rng.integers(0, 9))) for _ in range(6)]
    K = gram_matrix(strings, KernelParams(2, 0.5))
    np.testing.assert_array_equal(K, K.T)
    np.testing.assert_array_equal(np.diag(K), 1.0)
    assert K.min() >= 0 and K.max() <= 1
    assert np.linalg.eigvalsh(K).min() >= -1e-8
    for i in range(6):
        for j in range(6):
            np.testing.assert_allclose(K[i, j], kernel_normalized(strings[i], strings[j], KernelParams(2, 0.5)), atol=1e-12)


def test_gram_workers_agree():
    rng = np.random.default_rng(3)
    strings = [tuple(rng.integers(0, 5, 10)) for _ in range(20)]
    p = KernelParams(3, 0.4)
    np.testing.assert_array_equal(gram_matrix(strings, p), gram_matrix(strings, p, workers=4))


@pytest.mark.parametrize("n,lam", [(1, 0.5), (2, 0.3), (3, 0.7), (2, 1.0)])
def test_incremental_matches_fresh(n, lam):
    model = random_markov(7 + n, n_words=4)
    vocab = model.vocab
    p = KernelParams(n, lam)
    cache = GramCache(p, vocab)
    cache.commit([root(vocab)])
    rng = np.random.default_rng(n)
    beam = BeamSet([root(vocab)])
    for step in range(10):
        rows = [None if h.finished else model.next_token_log_probs(h.tokens) for h in beam]
        cands = extend_beam(beam, rows, vocab)
        fresh_counter = CellCounter()
        fresh = gram_matrix(cands, p, vocab, counter=fresh_counter)
        before = cache.cells
        np.testing.assert_allclose(gram_update_incremental(cache, cands), fresh, atol=1e-10, rtol=0)
        if step >= 2:
            assert cache.cells - before < fresh_counter.cells
        pick = sorted(rng.choice(len(cands), size=min(4, len(cands)), replace=False))
        beam = cands.subset(pick)
        cache.commit(beam.hypotheses)
    assert cache.fallbacks == 0


def test_carried_finished_pair_is_exact():
    vocab = Vocabulary.from_words("ab")
    p = KernelParams(2, 0.3)
    p1 = Hypothesis((0, 2, 3, 2), -1.0, False)
    p2 = Hypothesis((0, 2, 2, 3), -2.0, False)
    cache = GramCache(p, vocab)
    cache.commit([p1, p2])
    f1, f2 = p1.extend(1, -0.1, 1), p2.extend(1, -0.1, 1)
    first = cache.gram(BeamSet([f1, f2]))
    cache.commit([f1, f2])
    cells = cache.cells
    again = cache.gram(BeamSet([f1, f2]))
    assert cache.cells == cells
    np.testing.assert_array_equal(first, again)
    np.testing.assert_allclose(again, gram_matrix([f1, f2], p, vocab), atol=1e-12)


def test_cache_mismatch_falls_back(caplog):
    vocab = Vocabulary.from_words("ab")
    p = KernelParams(2, 0.3)
    cache = GramCache(p, vocab)
    cache.commit([root(vocab)])
    stranger = BeamSet([Hypothesis((0, 2, 3, 3), -1.0, False), Hypothesis((0, 3), -1.0, False)])
    with caplog.at_level(logging.INFO, logger="detbeam.kernel"):
        K = cache.gram(stranger)
    assert cache.fallbacks == 1
    assert "cache miss" in caplog.text
    np.testing.assert_array_equal(K, gram_matrix(stranger, p, vocab))


@pytest.mark.parametrize("seed", range(5))
def test_decode_with_and_without_cache(seed):
    model = random_markov(seed, n_words=4, order=3)
    cfg = DecodeConfig("detbs", k=4, w=0.5, n_max=8)
    a = decode_set(model, cfg)
    b = decode_set(model, cfg.replace(kernel_cache=False))
    assert [h.tokens for h in a] == [h.tokens for h in b]
