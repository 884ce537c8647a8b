"""Vocabulary, hypothesis and beam types shared by every decoder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

BOS = "<s>"
EOS = "</s>"

TokenSeq = tuple[int, ...]


class ContractError(ValueError):
    """Raised when a caller violates an operation's precondition."""


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token inventory with distinguished BOS and EOS sentinels.

    The extension alphabet (every token except BOS, EOS included) fixes the
    layout of all per-step score vectors: position ``i`` of a model output
    refers to token id ``extension_ids[i]``.
    """

    tokens: tuple[str, ...]
    bos_id: int = 0
    eos_id: int = 1
    _index: Mapping[str, int] = field(init=False, repr=False, compare=False)
    _ext: tuple[int, ...] = field(init=False, repr=False, compare=False)
    _ext_pos: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if len(set(tokens)) != len(tokens):
            raise ContractError("vocabulary tokens must be unique")
        n = len(tokens)
        if not (0 <= self.bos_id < n and 0 <= self.eos_id < n):
            raise ContractError("bos_id/eos_id out of range")
        if self.bos_id == self.eos_id:
            raise ContractError("bos_id and eos_id must differ")
        ext = tuple(i for i in range(n) if i != self.bos_id)
        pos = np.full(n, -1, dtype=np.int64)
        pos[list(ext)] = np.arange(len(ext))
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(tokens)})
        object.__setattr__(self, "_ext", ext)
        object.__setattr__(self, "_ext_pos", pos)

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Vocabulary":
        """Build ``[BOS, EOS, *sorted(words)]``."""
        uniq = sorted(set(words) - {BOS, EOS})
        return cls((BOS, EOS, *uniq))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def extension_ids(self) -> tuple[int, ...]:
        return self._ext

    @property
    def extension_size(self) -> int:
        return len(self._ext)

    def extension_position(self, token_id: int) -> int:
        pos = int(self._ext_pos[token_id])
        if pos < 0:
            raise ContractError(f"token id {token_id} is not in the extension alphabet")
        return pos

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise ContractError(f"unknown token {token!r}") from None

    def encode(self, words: Sequence[str], *, finished: bool = False) -> TokenSeq:
        ids = [self.bos_id] + [self.id(w) for w in words]
        if finished:
            ids.append(self.eos_id)
        return tuple(ids)

    def strip(self, seq: Sequence[int]) -> TokenSeq:
        """Drop BOS/EOS sentinels."""
        return tuple(i for i in seq if i != self.bos_id and i != self.eos_id)

    def decode(self, seq: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in self.strip(seq)]

    def check_sequence(self, seq: Sequence[int]) -> None:
        if not seq or seq[0] != self.bos_id:
            raise ContractError("sequence must start with BOS")
        for pos, tok in enumerate(seq):
            if not 0 <= tok < len(self.tokens):
                raise ContractError(f"token id {tok} out of range")
            if pos > 0 and tok == self.bos_id:
                raise ContractError("BOS may only appear first")
            if tok == self.eos_id and pos != len(seq) - 1:
                raise ContractError("EOS may only appear as the final token")


@dataclass(frozen=True)
class Hypothesis:
    """A partial or finished sequence with its cumulative natural-log probability."""

    tokens: TokenSeq
    log_prob: float
    finished: bool

    @property
    def length(self) -> int:
        """Number of generated tokens (BOS excluded, EOS included)."""
        return len(self.tokens) - 1

    def extend(self, token_id: int, step_log_prob: float, eos_id: int) -> "Hypothesis":
        return Hypothesis(
            self.tokens + (token_id,),
            self.log_prob + step_log_prob,
            token_id == eos_id,
        )


def root(vocab: Vocabulary) -> Hypothesis:
    return Hypothesis((vocab.bos_id,), 0.0, False)


@dataclass(frozen=True)
class Candidate:
    """A member of a beam-extension set together with its provenance.

    ``parent`` indexes the previous beam; ``token`` is the appended token id,
    or ``None`` when a finished hypothesis was carried over unchanged.
    """

    hyp: Hypothesis
    parent: int
    token: int | None


class BeamSet:
    """Insertion-ordered, duplicate-free collection of hypotheses.

    Insertion order is the canonical index used to lay out quality vectors
    and Gram matrices; ties anywhere in the decoders resolve to the lowest
    index.
    """

    def __init__(self, items: Iterable[Hypothesis | Candidate] = ()) -> None:
        self._cands: list[Candidate] = []
        self._seen: dict[TokenSeq, int] = {}
        for item in items:
            self.add(item)

    def add(self, item: Hypothesis | Candidate) -> bool:
        cand = item if isinstance(item, Candidate) else Candidate(item, -1, None)
        if cand.hyp.tokens in self._seen:
            return False
        self._seen[cand.hyp.tokens] = len(self._cands)
        self._cands.append(cand)
        return True

    def __len__(self) -> int:
        return len(self._cands)

    def __iter__(self):
        return (c.hyp for c in self._cands)

    def __getitem__(self, i: int) -> Hypothesis:
        return self._cands[i].hyp

    def __contains__(self, tokens: TokenSeq) -> bool:
        return tokens in self._seen

    @property
    def hypotheses(self) -> list[Hypothesis]:
        return [c.hyp for c in self._cands]

    @property
    def candidates(self) -> list[Candidate]:
        return list(self._cands)

    def index_of(self, tokens: TokenSeq) -> int:
        return self._seen[tokens]

    def log_probs(self) -> np.ndarray:
        return np.array([c.hyp.log_prob for c in self._cands], dtype=np.float64)

    def subset(self, indices: Iterable[int]) -> "BeamSet":
        return BeamSet(self._cands[i].hyp for i in indices)

    def all_finished(self) -> bool:
        return all(c.hyp.finished for c in self._cands)


def extend_beam(
    prev: BeamSet,
    scores: Sequence[np.ndarray | None],
    vocab: Vocabulary,
) -> BeamSet:
    """Build the beam-extension set from ``prev``.

    ``scores[i]`` holds step log-probabilities over the extension alphabet for
    ``prev[i]``; finished hypotheses need no row and are carried over once.
    """
    if len(prev) == 0:
        raise ContractError("cannot extend an empty beam")
    if len(scores) != len(prev):
        raise ContractError("one score row per hypothesis is required")
    ext = vocab.extension_ids
    out = BeamSet()
    for i, hyp in enumerate(prev):
        if hyp.finished:
            out.add(Candidate(hyp, i, None))
            continue
        row = scores[i]
        if row is None or len(row) != len(ext):
            raise ContractError(f"missing or malformed score row for hypothesis {i}")
        for pos, tok in enumerate(ext):
            out.add(Candidate(hyp.extend(tok, float(row[pos]), vocab.eos_id), i, tok))
    return out


def canonical_index(beam: BeamSet) -> dict[TokenSeq, int]:
    """Map each hypothesis to its 0-based insertion position."""
    return {hyp.tokens: i for i, hyp in enumerate(beam)}
