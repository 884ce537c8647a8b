import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from detbeam.core import ContractError, Vocabulary
from detbeam.model import (
    CallableModel,
    MarkovModel,
    PrefixedModel,
    TemperedModel,
    UniformModel,
    apply_temperature,
    score_sequence,
    train_markov,
)

from conftest import chain_model, random_markov


def test_single_context_corpus():
    # "a a" gives context (a) one "a" and one EOS, and context (BOS) one "a"
    m = train_markov([["a", "a"]], order=2, alpha=1e-9)
    v = m.vocab
    a = v.extension_position(v.id("a"))
    np.testing.assert_allclose(np.exp(m.next_token_log_probs((v.bos_id,))[a]), 1.0, atol=1e-7)
    np.testing.assert_allclose(np.exp(m.next_token_log_probs((v.bos_id, v.id("a")))[a]), 0.5, atol=1e-7)


def test_duplicated_corpus_doubles_counts():
    one = train_markov([["a", "b"]], order=2)
    two = train_markov([["a", "b"], ["a", "b"]], order=2)
    assert one.counts.keys() == two.counts.keys()
    for ctx, row in one.counts.items():
        np.testing.assert_array_equal(2 * row, two.counts[ctx])
    # with alpha -> 0 the distributions coincide
    one0 = train_markov([["a", "b"]], order=2, alpha=1e-12)
    two0 = train_markov([["a", "b"], ["a", "b"]], order=2, alpha=1e-12)
    for ctx in one.counts:
        prefix = (one.vocab.bos_id,) + tuple(t for t in ctx if t != one.vocab.bos_id)
        np.testing.assert_allclose(
            np.exp(one0.next_token_log_probs(prefix)), np.exp(two0.next_token_log_probs(prefix)), atol=1e-9
        )


def test_random_corpus_rows_normalise():
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(10)]
    corpus = [list(rng.choice(words, size=rng.integers(1, 8))) for _ in range(100)]
    m = train_markov(corpus, order=3)
    for ctx in list(m.counts) + [(99, 98)]:
        prefix = (m.vocab.bos_id,) + tuple(ctx)
        assert abs(logsumexp(m.next_token_log_probs(prefix))) < 1e-9


def test_train_errors():
    with pytest.raises(ValueError):
        train_markov([])
    with pytest.raises(ValueError):
        train_markov([["a"]], order=0)
    with pytest.raises(ValueError):
        train_markov([["a"]], alpha=0)
    with pytest.raises(ContractError):
        train_markov([["a", "zz"]], vocab=Vocabulary.from_words(["a"]))


def test_order_one_is_context_free():
    m = train_markov([["a", "b"], ["b"]], order=1)
    assert list(m.counts) == [()]
    v = m.vocab
    np.testing.assert_array_equal(
        m.next_token_log_probs((v.bos_id,)), m.next_token_log_probs((v.bos_id, v.id("a"), v.id("b")))
    )


def test_serialisation_roundtrip(tmp_path):
    m = train_markov([["the", "cat"], ["a", "cat", "sat"]], order=3, alpha=0.25)
    path = tmp_path / "m.json"
    m.save(path)
    back = MarkovModel.load(path)
    assert back.vocab == m.vocab and back.order == 3 and back.alpha == 0.25
    for ctx in m.counts:
        np.testing.assert_array_equal(back.counts[ctx], m.counts[ctx])
    m2 = train_markov([["the", "cat"], ["a", "cat", "sat"]], order=3, alpha=0.25)
    m2.save(tmp_path / "m2.json")
    assert path.read_bytes() == (tmp_path / "m2.json").read_bytes()


def test_load_rejects_foreign_files():
    with pytest.raises(ValueError):
        MarkovModel.from_dict({"format": "other"})
    m = train_markov([["a"]], order=2).to_dict()
    m["version"] = 99
    with pytest.raises(ValueError):
        MarkovModel.from_dict(m)


def test_temperature_examples():
    x = np.log([0.9, 0.1])
    np.testing.assert_allclose(apply_temperature(x, 1.0), x, atol=1e-12)
    np.testing.assert_allclose(apply_temperature(x, 100.0), np.log([0.5, 0.5]), atol=0.02)
    np.testing.assert_allclose(apply_temperature(x, 0.5), np.log([0.81 / 0.82, 0.01 / 0.82]), atol=1e-12)
    for T in (0, -1):
        with pytest.raises(ValueError):
            apply_temperature(x, T)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0.01, 10), min_size=2, max_size=8),
    st.floats(0.05, 20),
)
def test_temperature_normalises_and_keeps_argmax(weights, T):
    x = np.log(np.asarray(weights) / sum(weights))
    y = apply_temperature(x, T)
    assert abs(logsumexp(y)) < 1e-9
    if np.sum(x == x.max()) == 1:
        assert np.argmax(y) == np.argmax(x)


def test_score_sequence_examples():
    m = chain_model("abc")
    v = m.vocab
    assert score_sequence(m, v.encode(list("abc"), finished=True)) == 0.0
    u = UniformModel(Vocabulary.from_words("xyz"))
    seq = u.vocab.encode(["x", "y"], finished=True)
    np.testing.assert_allclose(score_sequence(u, seq), 3 * math.log(1 / 4))


def test_score_sequence_matches_manual_lookup(toy_model, toy_corpus):
    v = toy_model.vocab
    sent = toy_corpus[2050]
    seq = v.encode(sent, finished=True)
    padded = [v.bos_id, v.bos_id] + list(seq[1:])
    manual = 0.0
    for i in range(2, len(padded)):
        row = toy_model.counts.get(tuple(padded[i - 2 : i]))
        V = v.extension_size
        num = (row[v.extension_position(padded[i])] if row is not None else 0) + toy_model.alpha
        den = (row.sum() if row is not None else 0) + toy_model.alpha * V
        manual += math.log(num / den)
    np.testing.assert_allclose(score_sequence(toy_model, seq), manual, rtol=1e-12)


def test_score_is_additive():
    m = random_markov(3)
    v = m.vocab
    seq = (v.bos_id, 2, 3, 2)
    step = m.next_token_log_probs(seq)[v.extension_position(v.eos_id)]
    np.testing.assert_allclose(
        score_sequence(m, seq + (v.eos_id,)), score_sequence(m, seq) + step, rtol=1e-12
    )


def test_wrappers():
    m = random_markov(1)
    v = m.vocab
    t = TemperedModel(m, 2.0)
    np.testing.assert_allclose(t.next_token_log_probs((0,)), apply_temperature(m.next_token_log_probs((0,)), 2.0))
    p = PrefixedModel(m, [2])
    np.testing.assert_array_equal(p.next_token_log_probs((0,)), m.next_token_log_probs((0, 2)))
    with pytest.raises(ContractError):
        PrefixedModel(m, [v.eos_id])
    c = CallableModel(v, lambda prefix: {2: 3.0, 3: 1.0})
    np.testing.assert_allclose(np.exp(c.next_token_log_probs((0,))), [0, 0.75, 0.25, 0], atol=1e-15)
