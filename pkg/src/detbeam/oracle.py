"""Exhaustive references for tiny output spaces. Test and validation use only."""

from __future__ import annotations

import itertools
import math
from typing import NamedTuple

from .core import TokenSeq
from .model import SequenceModel

ENUMERATION_LIMIT = 100_000


class Enumeration(NamedTuple):
    sequences: list[tuple[TokenSeq, float]]
    # total probability of prefixes still open at the length limit
    unfinished_mass: float


def enumerate_sequences(
    model: SequenceModel, n_max: int, *, force_finish: bool = False
) -> Enumeration:
    """All sequences with at most ``n_max`` generated tokens (EOS included).

    With ``force_finish`` the open prefixes of length ``n_max`` are closed with
    EOS and scored like the decoders do, so the unfinished mass becomes zero.
    """
    vocab = model.vocab
    V = vocab.extension_size
    if V**n_max > ENUMERATION_LIMIT:
        raise ValueError(f"|V|^n_max = {V}^{n_max} exceeds the enumeration limit")
    ext = vocab.extension_ids
    eos_pos = vocab.extension_position(vocab.eos_id)
    out: list[tuple[TokenSeq, float]] = []
    open_mass = 0.0
    frontier = [((vocab.bos_id,), 0.0)]
    for depth in range(1, n_max + 1):
        nxt = []
        for prefix, lp in frontier:
            row = model.next_token_log_probs(prefix)
            for pos, tok in enumerate(ext):
                child = (prefix + (tok,), lp + float(row[pos]))
                (out if tok == vocab.eos_id else nxt).append(child)
        frontier = nxt
    for prefix, lp in frontier:
        if force_finish:
            out.append((prefix + (vocab.eos_id,), lp + float(model.next_token_log_probs(prefix)[eos_pos])))
        else:
            open_mass += math.exp(lp)
    return Enumeration(out, open_mass)


def exact_set_decode(
    model: SequenceModel, k: int, n_max: int, *, force_finish: bool = True
) -> list[tuple[TokenSeq, float]]:
    """The k most probable sequences; ties break on the token-id tuple."""
    seqs = enumerate_sequences(model, n_max, force_finish=force_finish).sequences
    return sorted(seqs, key=lambda x: (-x[1], x[0]))[:k]


def subset_set_decode(
    model: SequenceModel, k: int, n_max: int, *, force_finish: bool = True, limit: int = 12
) -> list[TokenSeq]:
    """Maximise the summed log-probability over every size-k subset directly."""
    seqs = enumerate_sequences(model, n_max, force_finish=force_finish).sequences
    if len(seqs) > limit:
        raise ValueError(f"subset enumeration limited to {limit} sequences, got {len(seqs)}")
    seqs = sorted(seqs, key=lambda x: x[0])
    best, best_val = None, -math.inf
    for combo in itertools.combinations(range(len(seqs)), k):
        val = math.fsum(seqs[i][1] for i in combo)
        if best is None or val > best_val:
            best, best_val = combo, val
    return [seqs[i][0] for i in best]
