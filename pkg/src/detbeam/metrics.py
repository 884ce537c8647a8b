"""n-gram diversity, sentence-level BLEU and per-set summaries.

All functions take sentinel-free token sequences (ids or strings).
"""

from __future__ import annotations

import logging
import math
import statistics
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Hashable, Sequence

log = logging.getLogger(__name__)

Tokens = Sequence[Hashable]


def ngrams(seq: Tokens, n: int) -> list[tuple]:
    seq = tuple(seq)
    return [seq[i : i + n] for i in range(len(seq) - n + 1)]


def ngram_diversity(seqs: Sequence[Tokens], n: int) -> float:
    """Unique n-grams divided by total n-gram occurrences across the set.

    Sequences shorter than n add nothing to either count; a set with no
    n-grams at all scores 1.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    total = 0
    uniq: set[tuple] = set()
    for s in seqs:
        grams = ngrams(s, n)
        total += len(grams)
        uniq.update(grams)
    if total == 0:
        log.debug("no %d-grams in set of %d strings; diversity defined as 1", n, len(seqs))
        return 1.0
    return len(uniq) / total


def sentence_bleu(hyp: Tokens, ref: Tokens, max_n: int = 4) -> float:
    """Add-one smoothed sentence BLEU against a single reference."""
    hyp, ref = tuple(hyp), tuple(ref)
    if not hyp or not ref:
        raise ValueError("hypothesis and reference must be non-empty")
    log_prec = 0.0
    for n in range(1, max_n + 1):
        h = Counter(ngrams(hyp, n))
        r = Counter(ngrams(ref, n))
        match = sum(min(c, r[g]) for g, c in h.items())
        total = sum(h.values())
        log_prec += math.log((match + 1) / (total + 1))
    bp = min(0.0, 1.0 - len(ref) / len(hyp))
    return math.exp(bp + log_prec / max_n)


@dataclass
class DiversityReport:
    d_per_n: dict[int, float]
    d_avg: float
    k: int
    bleu_min: float | None = None
    bleu_median: float | None = None
    bleu_max: float | None = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["d_per_n"] = {str(n): v for n, v in self.d_per_n.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DiversityReport":
        data = dict(data)
        data["d_per_n"] = {int(n): v for n, v in data["d_per_n"].items()}
        return cls(**data)


def set_report(seqs: Sequence[Tokens], ref: Tokens | None = None) -> DiversityReport:
    """d_1..d_4, their mean, and min/median/max BLEU when a reference is given."""
    d = {n: ngram_diversity(seqs, n) for n in (1, 2, 3, 4)}
    report = DiversityReport(d, sum(d.values()) / 4, len(seqs))
    if ref is not None and seqs:
        scores = [sentence_bleu(s, ref) if len(s) else 0.0 for s in seqs]
        report.bleu_min = min(scores)
        report.bleu_median = statistics.median(scores)
        report.bleu_max = max(scores)
    return report
