"""Set decoders framed as per-step subset selection over the extension set.

All four strategies share the same loop: start from ``{BOS}``, build the
extension set of the current beam, pick a subset, stop once every kept
hypothesis has emitted EOS or ``n_max`` steps have run. Survivors that are
still open after ``n_max`` steps are closed by appending EOS with its model
log-probability.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import BeamSet, Hypothesis, Vocabulary, extend_beam, root
from .dpp import (
    GreedyStats,
    QualityDiversityEnsemble,
    ensemble_logdet_exact,
    greedy_map_log,
)
from .kernel import GramCache, KernelParams, gram_matrix
from .model import SequenceModel, TemperedModel

STRATEGIES = ("standard", "detbs", "sbs", "dbs")


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str = "standard"
    k: int = 5
    w: float = 0.1
    temperature: float = 1.0
    kernel: KernelParams = field(default_factory=KernelParams)
    n_max: int = 50
    seed: int = 0
    groups: int | None = None
    # keep only the top k * prune_factor candidates before building K (detbs)
    prune_factor: int | None = None
    kernel_cache: bool = True

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("beam size k must be a positive integer")
        if not self.w >= 0:
            raise ValueError("diversity weight w must be >= 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError("n_max must be a positive integer")
        if self.groups is not None:
            if self.groups < 1 or self.k % self.groups:
                raise ValueError("groups must be a positive divisor of k")
        if self.prune_factor is not None and self.prune_factor < 1:
            raise ValueError("prune_factor must be >= 1")

    @property
    def n_groups(self) -> int:
        return self.groups if self.groups is not None else self.k

    def replace(self, **changes) -> "DecodeConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kernel"] = {"n": self.kernel.n, "lam": self.kernel.lam}
        return out


@dataclass
class DecodedSet:
    """Finished hypotheses in selection order, plus optional per-step trace."""

    hypotheses: list[Hypothesis]
    trace: list[dict] | None = None

    def __len__(self) -> int:
        return len(self.hypotheses)

    def __iter__(self):
        return iter(self.hypotheses)

    def token_lists(self, vocab: Vocabulary) -> list[tuple[int, ...]]:
        return [vocab.strip(h.tokens) for h in self.hypotheses]

    def texts(self, vocab: Vocabulary) -> list[str]:
        return [" ".join(vocab.decode(h.tokens)) for h in self.hypotheses]

    def string_set(self, vocab: Vocabulary) -> set[tuple[int, ...]]:
        return {h.tokens for h in self.hypotheses}


def _tempered(model: SequenceModel, T: float) -> SequenceModel:
    return model if T == 1.0 else TemperedModel(model, T)


def _score_rows(model: SequenceModel, beam: BeamSet) -> list[np.ndarray | None]:
    return [None if h.finished else model.next_token_log_probs(h.tokens) for h in beam]


def _close(model: SequenceModel, hyps: Sequence[Hypothesis]) -> list[Hypothesis]:
    vocab = model.vocab
    eos_pos = vocab.extension_position(vocab.eos_id)
    out = []
    for h in hyps:
        if not h.finished:
            h = h.extend(vocab.eos_id, float(model.next_token_log_probs(h.tokens)[eos_pos]), vocab.eos_id)
        out.append(h)
    return out


def top_k(scores: np.ndarray, k: int) -> list[int]:
    """Indices of the k largest scores; ties go to the lower index."""
    return [int(i) for i in np.argsort(-np.asarray(scores), kind="stable")[:k]]


def _beam_record(t: int, beam: BeamSet, vocab: Vocabulary, selected: Sequence[int], **extra) -> dict:
    rec = {
        "t": t,
        "beam": [" ".join(vocab.decode(h.tokens)) + (" </s>" if h.finished else "") for h in beam],
        "scores": [float(h.log_prob) for h in beam],
        "selected": [int(i) for i in selected],
    }
    rec.update(extra)
    return rec


def beam_search(model: SequenceModel, cfg: DecodeConfig, trace: list | None = None) -> DecodedSet:
    """Keep the k extensions with the highest cumulative log-probability."""
    m = _tempered(model, cfg.temperature)
    vocab = m.vocab
    beam = BeamSet([root(vocab)])
    for t in range(1, cfg.n_max + 1):
        cands = extend_beam(beam, _score_rows(m, beam), vocab)
        sel = top_k(cands.log_probs(), cfg.k)
        beam = cands.subset(sel)
        if trace is not None:
            trace.append(_beam_record(t, cands, vocab, sel))
        if beam.all_finished():
            break
    return DecodedSet(_close(m, beam.hypotheses), trace)


def greedy_search(model: SequenceModel, n_max: int, temperature: float = 1.0) -> Hypothesis:
    cfg = DecodeConfig("standard", k=1, temperature=temperature, n_max=n_max)
    return beam_search(model, cfg).hypotheses[0]


def _pad(selected: list[int], d_log: np.ndarray, k: int) -> list[int]:
    want = min(k, len(d_log))
    if len(selected) >= want:
        return selected
    taken = set(selected)
    rest = [i for i in top_k(d_log, len(d_log)) if i not in taken]
    return selected + rest[: want - len(selected)]


def swap_violations(ens: QualityDiversityEnsemble, selected: Sequence[int]) -> tuple[int, int]:
    """Count single-swap neighbours of ``selected`` with a strictly larger log-det.

    Returns ``(violations, neighbours)``.
    """
    base = ensemble_logdet_exact(ens, selected)
    chosen = set(selected)
    outside = [i for i in range(ens.size) if i not in chosen]
    bad = total = 0
    for pos in range(len(selected)):
        for u in outside:
            trial = list(selected)
            trial[pos] = u
            total += 1
            if ensemble_logdet_exact(ens, trial) > base + 1e-9 * max(1.0, abs(base)):
                bad += 1
    return bad, total


def build_ensemble(
    cands: BeamSet, cfg: DecodeConfig, vocab: Vocabulary, cache: GramCache | None = None
) -> QualityDiversityEnsemble:
    d_log = cands.log_probs()
    if cfg.w == 0:
        K = np.eye(len(cands))
    elif cache is not None:
        K = cache.gram(cands)
    else:
        K = gram_matrix(cands, cfg.kernel, vocab)
    return QualityDiversityEnsemble(d_log, K, cfg.w)


def detbs(model: SequenceModel, cfg: DecodeConfig, trace: list | None = None) -> DecodedSet:
    """Determinantal beam search.

    Each round selects k candidates approximately maximising
    ``log det(D_Y + w K_Y)``, where D holds cumulative probabilities and K is
    the normalised subsequence-kernel Gram matrix of the extension set. With
    ``w = 0`` this reduces to ordinary beam search.
    """
    m = _tempered(model, cfg.temperature)
    vocab = m.vocab
    start = root(vocab)
    beam = BeamSet([start])
    cache = None
    if cfg.kernel_cache and cfg.w > 0:
        cache = GramCache(cfg.kernel, vocab)
        cache.commit([start])
    for t in range(1, cfg.n_max + 1):
        cands = extend_beam(beam, _score_rows(m, beam), vocab)
        if cfg.prune_factor is not None and len(cands) > cfg.k * cfg.prune_factor:
            keep = sorted(top_k(cands.log_probs(), cfg.k * cfg.prune_factor))
            cands = BeamSet(cands.candidates[i] for i in keep)
        ens = build_ensemble(cands, cfg, vocab, cache)
        stats = GreedyStats()
        sel = _pad(greedy_map_log(ens, cfg.k, stats), ens.d_log, cfg.k)
        beam = cands.subset(sel)
        if cache is not None:
            cache.commit(beam.hypotheses)
        if trace is not None:
            bad, total = swap_violations(ens, sel)
            trace.append(
                _beam_record(
                    t,
                    cands,
                    vocab,
                    sel,
                    candidates=len(cands),
                    greedy_updates=stats.updates,
                    logdet=ensemble_logdet_exact(ens, sel),
                    swap_violations=bad,
                    swap_neighbours=total,
                )
            )
        if beam.all_finished():
            break
    return DecodedSet(_close(m, beam.hypotheses), trace)


def _gumbel_shift(parent: float, perturbed: np.ndarray) -> np.ndarray:
    """Condition children's Gumbels so their maximum equals the parent's value."""
    top = np.max(perturbed)
    if top == -np.inf:
        return perturbed.copy()
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = perturbed - top
        l1m = np.where(z < -math.log(2), np.log1p(-np.exp(z)), np.log(-np.expm1(z)))
        v = parent - perturbed + l1m
        out = parent - np.maximum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))
    out[perturbed == -np.inf] = -np.inf
    out[perturbed == top] = parent
    return out


def stochastic_beam_search(
    model: SequenceModel, cfg: DecodeConfig, trace: list | None = None
) -> DecodedSet:
    """Sample k sequences without replacement via top-down Gumbel-top-k."""
    m = _tempered(model, cfg.temperature)
    vocab = m.vocab
    rng = np.random.default_rng(cfg.seed)
    beam = BeamSet([root(vocab)])
    keys = np.zeros(1)
    for t in range(1, cfg.n_max + 1):
        rows = _score_rows(m, beam)
        child_keys: list[np.ndarray | None] = []
        for h, row, g in zip(beam, rows, keys):
            if row is None:
                child_keys.append(None)
                continue
            phi = h.log_prob + row
            child_keys.append(_gumbel_shift(float(g), phi + rng.gumbel(size=len(row))))
        cands = extend_beam(beam, rows, vocab)
        cand_keys = np.array(
            [
                keys[c.parent] if c.token is None else child_keys[c.parent][vocab.extension_position(c.token)]
                for c in cands.candidates
            ]
        )
        sel = top_k(cand_keys, cfg.k)
        beam = cands.subset(sel)
        keys = cand_keys[sel]
        if trace is not None:
            trace.append(_beam_record(t, cands, vocab, sel, keys=[float(x) for x in keys]))
        if beam.all_finished():
            break
    return DecodedSet(_close(m, beam.hypotheses), trace)


def diverse_beam_search(
    model: SequenceModel, cfg: DecodeConfig, trace: list | None = None
) -> DecodedSet:
    """Group-sequential beam search with a Hamming diversity penalty.

    At step t, group g's candidates lose ``w`` for each hypothesis of groups
    1..g-1 that emitted the same token at step t. The penalty only steers
    selection; stored log-probabilities are the model's.
    """
    m = _tempered(model, cfg.temperature)
    vocab = m.vocab
    G = cfg.n_groups
    width = cfg.k // G
    groups = [BeamSet([root(vocab)]) for _ in range(G)]
    for t in range(1, cfg.n_max + 1):
        if all(b.all_finished() for b in groups):
            break
        emitted: Counter = Counter()
        for g in range(G):
            beam = groups[g]
            if beam.all_finished():
                continue
            cands = extend_beam(beam, _score_rows(m, beam), vocab)
            penalty = np.array([emitted[c.token] if c.token is not None else 0 for c in cands.candidates])
            scores = cands.log_probs() - cfg.w * penalty
            sel = top_k(scores, width)
            groups[g] = cands.subset(sel)
            for i in sel:
                tok = cands.candidates[i].token
                if tok is not None:
                    emitted[tok] += 1
            if trace is not None:
                trace.append(_beam_record(t, cands, vocab, sel, group=g))
    out: list[Hypothesis] = []
    for beam in groups:
        out.extend(_close(m, beam.hypotheses))
    return DecodedSet(out, trace)


_DISPATCH = {
    "standard": beam_search,
    "detbs": detbs,
    "sbs": stochastic_beam_search,
    "dbs": diverse_beam_search,
}


def decode_set(model: SequenceModel, cfg: DecodeConfig, trace: bool = False) -> DecodedSet:
    """Run the configured strategy; ``trace=True`` records per-step diagnostics."""
    try:
        fn = _DISPATCH[cfg.strategy]
    except KeyError:
        raise ValueError(f"unknown strategy {cfg.strategy!r}") from None
    return fn(model, cfg, [] if trace else None)


def write_trace(records: Sequence[dict], fh) -> None:
    """Write trace records as JSON lines."""
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
