"""Locally-normalised sequence models.

Every model exposes ``vocab`` and ``next_token_log_probs(prefix)``, returning
natural-log probabilities laid out over ``vocab.extension_ids``. Prefixes are
full token-id tuples starting with BOS.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from typing import Callable, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.special import logsumexp

from .core import ContractError, TokenSeq, Vocabulary

FORMAT_NAME = "detbeam-markov"
FORMAT_VERSION = 1


@runtime_checkable
class SequenceModel(Protocol):
    vocab: Vocabulary

    def next_token_log_probs(self, prefix: TokenSeq) -> np.ndarray: ...


def apply_temperature(log_probs: np.ndarray, T: float) -> np.ndarray:
    """Generalised softmax: ``x/T - logsumexp(x/T)``."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    x = np.asarray(log_probs, dtype=np.float64)
    if T == 1.0:
        return x.copy()
    scaled = x / T
    return scaled - logsumexp(scaled)


def score_sequence(model: SequenceModel, seq: Sequence[int]) -> float:
    """Sum of per-step log-probabilities of ``seq`` (EOS step included)."""
    vocab = model.vocab
    vocab.check_sequence(seq)
    total = 0.0
    seq = tuple(seq)
    for t in range(1, len(seq)):
        lp = model.next_token_log_probs(seq[:t])
        total += float(lp[vocab.extension_position(seq[t])])
    return total


class MarkovModel:
    """Add-alpha smoothed n-gram model over a closed vocabulary.

    ``order`` counts the predicted token, so order 3 conditions on the two
    previous tokens; the left edge is padded with BOS.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        order: int,
        alpha: float,
        counts: Mapping[TokenSeq, Mapping[int, float]],
    ) -> None:
        if order < 1:
            raise ValueError("order must be >= 1")
        if not alpha > 0:
            raise ValueError("alpha must be > 0")
        self.vocab = vocab
        self.order = order
        self.alpha = float(alpha)
        V = vocab.extension_size
        self._counts: dict[TokenSeq, np.ndarray] = {}
        for ctx, row in counts.items():
            vec = np.zeros(V)
            for tok, c in row.items():
                vec[vocab.extension_position(tok)] += c
            self._counts[tuple(ctx)] = vec
        self._cache: dict[TokenSeq, np.ndarray] = {}
        self._uniform = np.full(V, -math.log(V))

    @property
    def counts(self) -> dict[TokenSeq, np.ndarray]:
        return self._counts

    def context(self, prefix: TokenSeq) -> TokenSeq:
        width = self.order - 1
        if width == 0:
            return ()
        padded = (self.vocab.bos_id,) * width + tuple(prefix[1:])
        return padded[-width:]

    def next_token_log_probs(self, prefix: TokenSeq) -> np.ndarray:
        ctx = self.context(prefix)
        cached = self._cache.get(ctx)
        if cached is not None:
            return cached
        row = self._counts.get(ctx)
        if row is None:
            out = self._uniform
        else:
            smoothed = row + self.alpha
            out = np.log(smoothed) - math.log(smoothed.sum())
        out.setflags(write=False)
        # benign race: concurrent writers store identical arrays
        self._cache[ctx] = out
        return out

    def to_dict(self) -> dict:
        tok = self.vocab.tokens
        ext = self.vocab.extension_ids
        rows = []
        for ctx in sorted(self._counts, key=lambda c: [tok[i] for i in c]):
            vec = self._counts[ctx]
            row = {tok[ext[p]]: _num(vec[p]) for p in range(len(vec)) if vec[p] != 0}
            rows.append({"context": [tok[i] for i in ctx], "next": dict(sorted(row.items()))})
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "vocab": list(tok),
            "bos_id": self.vocab.bos_id,
            "eos_id": self.vocab.eos_id,
            "order": self.order,
            "alpha": self.alpha,
            "counts": rows,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MarkovModel":
        if data.get("format") != FORMAT_NAME:
            raise ValueError("not a detbeam Markov model file")
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {data.get('version')}")
        vocab = Vocabulary(tuple(data["vocab"]), data["bos_id"], data["eos_id"])
        counts = {}
        for row in data["counts"]:
            ctx = tuple(vocab.id(t) for t in row["context"])
            counts[ctx] = {vocab.id(t): c for t, c in row["next"].items()}
        return cls(vocab, data["order"], data["alpha"], counts)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MarkovModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _num(x: float):
    return int(x) if float(x).is_integer() else float(x)


def train_markov(
    corpus: Sequence[Sequence[str]],
    order: int = 3,
    alpha: float = 0.1,
    vocab: Vocabulary | None = None,
) -> MarkovModel:
    """Count BOS-padded, EOS-terminated n-grams from tokenised sentences."""
    if not corpus:
        raise ValueError("corpus is empty")
    if order < 1:
        raise ValueError("order must be >= 1")
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    if vocab is None:
        vocab = Vocabulary.from_words(w for sent in corpus for w in sent)
    width = order - 1
    counts: dict[TokenSeq, Counter] = defaultdict(Counter)
    for sent in corpus:
        ids = [vocab.id(w) for w in sent]
        if vocab.bos_id in ids or vocab.eos_id in ids:
            raise ContractError("corpus sentences must not contain sentinels")
        padded = [vocab.bos_id] * width + ids + [vocab.eos_id]
        for i in range(width, len(padded)):
            counts[tuple(padded[i - width : i])][padded[i]] += 1
    return MarkovModel(vocab, order, alpha, counts)


class TemperedModel:
    """Wraps a model, re-normalising each step with temperature ``T``."""

    def __init__(self, base: SequenceModel, T: float) -> None:
        if not T > 0:
            raise ValueError("temperature must be positive")
        self.base = base
        self.vocab = base.vocab
        self.T = float(T)

    def next_token_log_probs(self, prefix: TokenSeq) -> np.ndarray:
        return apply_temperature(self.base.next_token_log_probs(prefix), self.T)


class PrefixedModel:
    """Conditions ``base`` on fixed context tokens placed after BOS.

    Decoders see only the generated continuation; the context plays the
    role of the conditioning input.
    """

    def __init__(self, base: SequenceModel, context: Sequence[int]) -> None:
        self.base = base
        self.vocab = base.vocab
        self.context = tuple(context)
        if self.vocab.bos_id in self.context or self.vocab.eos_id in self.context:
            raise ContractError("context must not contain sentinels")

    def next_token_log_probs(self, prefix: TokenSeq) -> np.ndarray:
        return self.base.next_token_log_probs((prefix[0],) + self.context + tuple(prefix[1:]))


class UniformModel:
    def __init__(self, vocab: Vocabulary) -> None:
        self.vocab = vocab
        V = vocab.extension_size
        self._lp = np.full(V, -math.log(V))

    def next_token_log_probs(self, prefix: TokenSeq) -> np.ndarray:
        return self._lp


class CallableModel:
    """Adapter for hand-built models.

    ``fn(prefix)`` returns a mapping from token id to probability; ids that
    are absent get probability zero. Used for small constructed examples.
    """

    def __init__(self, vocab: Vocabulary, fn: Callable[[TokenSeq], Mapping[int, float]]) -> None:
        self.vocab = vocab
        self.fn = fn

    def next_token_log_probs(self, prefix: TokenSeq) -> np.ndarray:
        probs = np.zeros(self.vocab.extension_size)
        for tok, p in self.fn(tuple(prefix)).items():
            probs[self.vocab.extension_position(tok)] += p
        total = probs.sum()
        if not total > 0:
            raise ValueError(f"model assigns no mass after prefix {prefix}")
        with np.errstate(divide="ignore"):
            return np.log(probs / total)
