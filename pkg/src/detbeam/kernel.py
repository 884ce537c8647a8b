"""Gap-weighted string subsequence kernel and Gram matrices over beams.

Strings are token-id tuples with sentinels already removed. Every shared
length-``n`` subsequence contributes ``lam ** (span_s + span_t)``, where a
span counts the positions from the first to the last matched token.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .core import BeamSet, Hypothesis, TokenSeq, Vocabulary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KernelParams:
    n: int = 2
    lam: float = 0.3

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"subsequence length must be a positive integer, got {self.n}")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"decay must lie in (0, 1], got {self.lam}")


# presets mirroring the best reported settings per language pair
DE_EN = KernelParams(n=2, lam=0.1)
EN_FR = KernelParams(n=2, lam=0.3)


def kernel_naive(s: Sequence[int], t: Sequence[int], params: KernelParams) -> float:
    """Explicit enumeration over all index vectors. Exponential; test use only."""
    n, lam = params.n, params.lam

    def features(x):
        out: dict[tuple, float] = {}
        for idx in itertools.combinations(range(len(x)), n):
            u = tuple(x[i] for i in idx)
            out[u] = out.get(u, 0.0) + lam ** (idx[-1] - idx[0] + 1)
        return out

    fs, ft = features(tuple(s)), features(tuple(t))
    if len(fs) > len(ft):
        fs, ft = ft, fs
    return math.fsum(v * ft[u] for u, v in fs.items() if u in ft)


def _discounted_cumsum2d(a: np.ndarray, lam: float) -> np.ndarray:
    # P[i, j] = sum_{i' <= i, j' <= j} a[i', j'] * lam**((i - i') + (j - j'))
    rows = lfilter([1.0], [1.0, -lam], a, axis=1)
    return lfilter([1.0], [1.0, -lam], rows, axis=0)


def _dp(s: np.ndarray, t: np.ndarray, n: int, lam: float) -> tuple[float, np.ndarray | None]:
    """Return the kernel and the level ``n - 1`` prefix table (``None`` for n = 1).

    ``A_r[i, j]`` accumulates weighted matches of length-``r`` subsequences
    ending exactly at ``(i, j)``; each level costs O(|s|·|t|).
    """
    if len(s) == 0 or len(t) == 0:
        return 0.0, np.zeros((len(s), len(t))) if n > 1 else None
    match = (s[:, None] == t[None, :]).astype(np.float64)
    a = match
    prefix = None
    lam2 = lam * lam
    for _ in range(1, n):
        prefix = _discounted_cumsum2d(a, lam)
        a = np.zeros_like(match)
        a[1:, 1:] = match[1:, 1:] * (lam2 * prefix[:-1, :-1])
    return float(lam2 * a.sum()), prefix


def _ordered(s: Sequence[int], t: Sequence[int]) -> tuple[TokenSeq, TokenSeq]:
    s, t = tuple(s), tuple(t)
    return (s, t) if (len(s), s) <= (len(t), t) else (t, s)


def kernel_fast(s: Sequence[int], t: Sequence[int], params: KernelParams) -> float:
    """O(n·|s|·|t|) dynamic program; argument order does not affect the result."""
    s, t = _ordered(s, t)
    if len(s) < params.n or len(t) < params.n:
        return 0.0
    k, _ = _dp(np.asarray(s, dtype=np.int64), np.asarray(t, dtype=np.int64), params.n, params.lam)
    return k


def _normalize_pair(kst: float, kss: float, ktt: float, same: bool) -> float:
    if kss <= 0.0 or ktt <= 0.0:
        return 1.0 if same else 0.0
    if same:
        return 1.0
    return min(1.0, max(0.0, kst / math.sqrt(kss * ktt)))


def kernel_normalized(s: Sequence[int], t: Sequence[int], params: KernelParams) -> float:
    """Cosine-normalised kernel; strings with zero self-similarity match only themselves."""
    s, t = tuple(s), tuple(t)
    return _normalize_pair(
        kernel_fast(s, t, params),
        kernel_fast(s, s, params),
        kernel_fast(t, t, params),
        s == t,
    )


def normalize_gram(raw: np.ndarray, strings: Sequence[TokenSeq]) -> np.ndarray:
    """Turn raw kernel values into a normalised Gram matrix with unit diagonal."""
    m = len(strings)
    diag = np.diag(raw).copy()
    out = np.zeros((m, m))
    pos = diag > 0
    scale = np.where(pos, np.sqrt(np.where(pos, diag, 1.0)), 1.0)
    both = pos[:, None] & pos[None, :]
    out[both] = (raw / np.outer(scale, scale))[both]
    np.clip(out, 0.0, 1.0, out=out)
    # identical strings (possibly with zero self-kernel) are fully similar
    groups: dict[TokenSeq, list[int]] = {}
    for i, s in enumerate(strings):
        groups.setdefault(s, []).append(i)
    for idx in groups.values():
        if len(idx) > 1:
            out[np.ix_(idx, idx)] = 1.0
    np.fill_diagonal(out, 1.0)
    return out


def _kernel_strings(beam: BeamSet | Sequence, vocab: Vocabulary | None) -> list[TokenSeq]:
    items = list(beam)
    if items and isinstance(items[0], Hypothesis):
        if vocab is None:
            raise ValueError("vocab is required to strip sentinels from hypotheses")
        return [vocab.strip(h.tokens) for h in items]
    return [tuple(x) for x in items]


class CellCounter:
    """Counts DP cell evaluations; used to compare fresh vs cached Gram builds."""

    def __init__(self) -> None:
        self.cells = 0


def gram_matrix(
    beam: BeamSet | Sequence,
    params: KernelParams,
    vocab: Vocabulary | None = None,
    *,
    counter: CellCounter | None = None,
    workers: int | None = None,
) -> np.ndarray:
    """Normalised Gram matrix over a beam, computed pair by pair from scratch.

    ``beam`` is a BeamSet/list of hypotheses (sentinels stripped via ``vocab``)
    or a list of already-stripped token sequences. Only the upper triangle is
    evaluated; cells are independent so ``workers`` > 1 spreads them over a
    thread pool.
    """
    strings = _kernel_strings(beam, vocab)
    m = len(strings)
    pairs = [(i, j) for i in range(m) for j in range(i, m)]

    def cell(ij):
        i, j = ij
        return kernel_fast(strings[i], strings[j], params)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(cell, pairs, chunksize=64))
    else:
        values = [cell(ij) for ij in pairs]
    raw = np.zeros((m, m))
    for (i, j), v in zip(pairs, values):
        raw[i, j] = raw[j, i] = v
    if counter is not None:
        counter.cells += sum(params.n * len(strings[i]) * len(strings[j]) for i, j in pairs)
    return normalize_gram(raw, strings)


@dataclass
class _PairTable:
    value: float
    row: np.ndarray  # weights for a new last token on the first string, plus corner at [-1]
    col: np.ndarray  # weights for a new last token on the second string


class GramCache:
    """Reuses kernel work between consecutive decoding rounds.

    A child pair ``(p + x, q + y)`` differs from its parent pair ``(p, q)`` by
    one DP row and one column; only the last level of those is needed to
    update the kernel value. Parent-pair tables are built once per pair of
    committed hypotheses, and values for pairs of carried-over finished
    hypotheses are returned verbatim.

    The cache is not safe for concurrent writers; use one per decoding run.
    """

    def __init__(self, params: KernelParams, vocab: Vocabulary) -> None:
        self.params = params
        self.vocab = vocab
        self.cells = 0
        self.fallbacks = 0
        self._parents: set[TokenSeq] = set()
        self._tables: dict[tuple[TokenSeq, TokenSeq], _PairTable] = {}
        self._values: dict[tuple[TokenSeq, TokenSeq], float] = {}
        self._pending: tuple[list[TokenSeq], np.ndarray] | None = None

    def commit(self, hyps: Sequence[Hypothesis]) -> None:
        """Register the selected hypotheses as parents of the next round."""
        keep = {h.tokens for h in hyps}
        values = {}
        if self._pending is not None:
            tokens, raw = self._pending
            idx = [i for i, t in enumerate(tokens) if t in keep]
            for i in idx:
                for j in idx:
                    values[(tokens[i], tokens[j])] = float(raw[i, j])
        self._values = values
        self._tables = {
            key: tab for key, tab in self._tables.items() if key[0] in keep and key[1] in keep
        }
        self._parents = keep
        self._pending = None

    def _table(self, p: TokenSeq, q: TokenSeq) -> _PairTable:
        key = (p, q)
        tab = self._tables.get(key)
        if tab is not None:
            return tab
        n, lam = self.params.n, self.params.lam
        sp = np.asarray(self.vocab.strip(p), dtype=np.int64)
        sq = np.asarray(self.vocab.strip(q), dtype=np.int64)
        a, b = len(sp), len(sq)
        value, prefix = _dp(sp, sq, n, lam)
        self.cells += n * a * b
        if n == 1:
            row, col = np.ones(b + 1), np.ones(a)
        else:
            row, col = np.zeros(b + 1), np.zeros(a)
            if a and b:
                row[1:] = lam * lam * prefix[a - 1, :]
                col[1:] = lam * lam * prefix[:-1, b - 1]
        tab = _PairTable(value, row, col)
        self._tables[key] = tab
        return tab

    def gram(self, beam: BeamSet) -> np.ndarray:
        vocab = self.vocab
        eos = vocab.eos_id
        cands = []
        for hyp in beam:
            if hyp.tokens in self._parents:
                cands.append((hyp.tokens, None))
            elif hyp.tokens[:-1] in self._parents:
                tok = hyp.tokens[-1]
                cands.append((hyp.tokens[:-1], None if tok == eos else tok))
            else:
                self.fallbacks += 1
                log.info("gram cache miss for %s; computing from scratch", hyp.tokens)
                counter = CellCounter()
                out = gram_matrix(beam, self.params, vocab, counter=counter)
                self.cells += counter.cells
                return out

        m = len(cands)
        tokens = [h.tokens for h in beam]
        strings = [vocab.strip(t) for t in tokens]
        groups: dict[TokenSeq, list[int]] = {}
        for i, (par, _) in enumerate(cands):
            groups.setdefault(par, []).append(i)
        order = list(groups)
        ext = np.array([-1 if tok is None else tok for _, tok in cands], dtype=np.int64)
        lam2 = self.params.lam ** 2
        V = len(vocab)
        raw = np.zeros((m, m))
        for gi, p in enumerate(order):
            sp = np.asarray(vocab.strip(p), dtype=np.int64)
            ip = np.asarray(groups[p])
            for q in order[gi:]:
                iq = np.asarray(groups[q])
                stored = self._values.get((p, q))
                if stored is not None and (ext[ip] < 0).all() and (ext[iq] < 0).all():
                    # both sides carried over unchanged: reuse the committed value
                    raw[np.ix_(ip, iq)] = stored
                    raw[np.ix_(iq, ip)] = stored
                    continue
                tab = self._table(p, q)
                sq = np.asarray(vocab.strip(q), dtype=np.int64)
                rowsum = np.bincount(sq, weights=tab.row[: len(sq)], minlength=V)
                colsum = np.bincount(sp, weights=tab.col, minlength=V)
                xs, ys = ext[ip], ext[iq]
                dx, dy = xs >= 0, ys >= 0
                rs = np.where(dx, rowsum[np.maximum(xs, 0)], 0.0)
                cs = np.where(dy, colsum[np.maximum(ys, 0)], 0.0)
                corner = (xs[:, None] == ys[None, :]) & dx[:, None] & dy[None, :]
                block = tab.value + lam2 * (rs[:, None] + cs[None, :] + corner * tab.row[-1])
                self.cells += len(sp) + len(sq) + block.size
                if p == q:
                    block = np.triu(block) + np.triu(block, 1).T
                raw[np.ix_(ip, iq)] = block
                raw[np.ix_(iq, ip)] = block.T
        self._pending = (tokens, raw)
        return normalize_gram(raw, strings)


def gram_update_incremental(cache: GramCache, new_beam: BeamSet) -> np.ndarray:
    """Normalised Gram matrix of ``new_beam`` built from ``cache``."""
    return cache.gram(new_beam)
