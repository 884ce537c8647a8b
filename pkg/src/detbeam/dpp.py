"""Subdeterminant maximisation over L = diag(exp(d_log)) + w * K.

Contains signed log-space scalars, exact log-determinants, exhaustive search
for small ensembles, and the incremental-Cholesky greedy MAP routine in both
linear and log-space form.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

NEG_INF = float("-inf")


def log1mexp(x: float) -> float:
    """``log(1 - exp(x))`` for ``x <= 0``, stable near both ends."""
    if x > 0:
        raise ValueError("log1mexp needs x <= 0")
    if x == 0:
        return NEG_INF
    if x > -math.log(2):
        return math.log(-math.expm1(x))
    return math.log1p(-math.exp(x))


def _log1mexp_arr(x: np.ndarray) -> np.ndarray:
    out = np.full(x.shape, NEG_INF)
    with np.errstate(divide="ignore", invalid="ignore"):
        near = (x > -math.log(2)) & (x < 0)
        far = x <= -math.log(2)
        out[near] = np.log(-np.expm1(x[near]))
        out[far] = np.log1p(-np.exp(x[far]))
    return out


@dataclass(frozen=True)
class SignedLogValue:
    """A real number stored as ``sign * exp(log_mag)``; zero is ``(-inf, +1)``."""

    log_mag: float
    sign: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "log_mag", float(self.log_mag))
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if math.isnan(self.log_mag):
            raise ValueError("log magnitude is NaN")
        object.__setattr__(self, "sign", 1 if self.log_mag == NEG_INF else int(self.sign))

    @classmethod
    def from_float(cls, x: float) -> "SignedLogValue":
        if x == 0:
            return ZERO
        return cls(math.log(abs(x)), 1 if x > 0 else -1)

    def __float__(self) -> float:
        return float(self.sign * math.exp(self.log_mag))

    @property
    def is_zero(self) -> bool:
        return self.log_mag == NEG_INF

    def __neg__(self) -> "SignedLogValue":
        return SignedLogValue(self.log_mag, -self.sign)

    def __add__(self, other: "SignedLogValue") -> "SignedLogValue":
        return log_add(self, other)

    def __sub__(self, other: "SignedLogValue") -> "SignedLogValue":
        return log_add(self, -other)

    def __mul__(self, other: "SignedLogValue") -> "SignedLogValue":
        return SignedLogValue(self.log_mag + other.log_mag, self.sign * other.sign)


ZERO = SignedLogValue(NEG_INF, 1)
ONE = SignedLogValue(0.0, 1)


def log_add(a: SignedLogValue, b: SignedLogValue) -> SignedLogValue:
    """Signed sum in log space; same signs add magnitudes, opposite signs cancel."""
    if a.is_zero:
        return b
    if b.is_zero:
        return a
    if (a.log_mag, a.sign) < (b.log_mag, b.sign):
        a, b = b, a
    diff = b.log_mag - a.log_mag
    if a.sign == b.sign:
        return SignedLogValue(a.log_mag + math.log1p(math.exp(diff)), a.sign)
    if diff == 0:
        return ZERO
    return SignedLogValue(a.log_mag + log1mexp(diff), a.sign)


def log_inner(c1, c2, s1, s2) -> SignedLogValue:
    """Signed dot product of two log-magnitude vectors, folded term by term."""
    acc = ZERO
    for a, b, sa, sb in zip(c1, c2, s1, s2):
        acc = log_add(acc, SignedLogValue(a + b, sa * sb) if a + b > NEG_INF else ZERO)
    return acc


def _signed_logsumexp(logs: np.ndarray, signs: np.ndarray, axis: int = 0):
    """Column-wise signed log-sum-exp: returns (log|sum|, sign(sum))."""

    def lse(mask):
        x = np.where(mask, logs, NEG_INF)
        top = np.max(x, axis=axis, keepdims=True)
        safe = np.where(np.isfinite(top), top, 0.0)
        with np.errstate(divide="ignore"):
            s = np.log(np.sum(np.exp(x - safe), axis=axis)) + np.squeeze(safe, axis)
        return np.where(np.isfinite(np.squeeze(top, axis)), s, NEG_INF)

    pos = lse(signs > 0)
    neg = lse(signs < 0)
    hi = np.maximum(pos, neg)
    lo = np.minimum(pos, neg)
    with np.errstate(invalid="ignore"):
        diff = np.where(np.isfinite(hi), lo - hi, NEG_INF)
    mag = np.where(np.isfinite(hi), hi + _log1mexp_arr(np.minimum(diff, 0.0)), NEG_INF)
    sign = np.where(pos >= neg, 1, -1)
    sign = np.where(np.isfinite(mag), sign, 1)
    return mag, sign


@dataclass
class QualityDiversityEnsemble:
    """``L = diag(exp(d_log)) + w * K``; the weight never touches the quality term."""

    d_log: np.ndarray
    K: np.ndarray
    w: float

    def __post_init__(self) -> None:
        self.d_log = np.asarray(self.d_log, dtype=np.float64)
        self.K = np.asarray(self.K, dtype=np.float64)
        m = len(self.d_log)
        if self.K.shape != (m, m):
            raise ValueError(f"K must be {m}x{m}, got {self.K.shape}")
        if not self.w >= 0:
            raise ValueError("diversity weight must be non-negative")
        if np.any(self.K < 0):
            raise ValueError("K entries must be non-negative")

    @property
    def size(self) -> int:
        return len(self.d_log)

    def log_matrix(self) -> np.ndarray:
        """Entry-wise natural log of L (``-inf`` for zero entries)."""
        with np.errstate(divide="ignore"):
            logw = math.log(self.w) if self.w > 0 else NEG_INF
            off = np.log(self.K) + logw if self.w > 0 else np.full(self.K.shape, NEG_INF)
        out = off.copy()
        diag = np.logaddexp(self.d_log, np.diag(off))
        np.fill_diagonal(out, diag)
        return out

    def linear_matrix(self) -> np.ndarray:
        return np.diag(np.exp(self.d_log)) + self.w * self.K


def _cholesky_logdet(mat: np.ndarray) -> float:
    m = len(mat)
    try:
        chol = np.linalg.cholesky(mat)
        return 2.0 * float(np.sum(np.log(np.diag(chol))))
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10 * float(np.trace(mat)) / m
    for _ in range(2):
        try:
            chol = np.linalg.cholesky(mat + jitter * np.eye(m))
        except np.linalg.LinAlgError:
            jitter *= 10
            continue
        pivots = np.diag(chol) ** 2
        # a pivot that only the jitter keeps positive marks a singular subset
        if np.any(pivots <= 10 * jitter):
            return NEG_INF
        return float(np.sum(np.log(pivots)))
    return NEG_INF


def ensemble_logdet_exact(ens: QualityDiversityEnsemble, subset) -> float:
    """``log det L[S, S]`` via a dense Cholesky after factoring out the largest entry."""
    idx = list(subset)
    if len(set(idx)) != len(idx) or any(not 0 <= i < ens.size for i in idx):
        raise ValueError("subset indices must be valid and distinct")
    if not idx:
        return 0.0
    logs = ens.log_matrix()[np.ix_(idx, idx)]
    diag = np.diag(logs)
    offdiag = logs[~np.eye(len(idx), dtype=bool)]
    if not np.any(offdiag > NEG_INF):
        return float(sum(diag))
    if not np.all(np.isfinite(diag)):
        return NEG_INF
    top = float(np.max(logs))
    return _cholesky_logdet(np.exp(logs - top)) + len(idx) * top


def brute_force_map(ens: QualityDiversityEnsemble, k: int, max_size: int = 16) -> tuple[int, ...]:
    """Exhaustive argmax of the subset log-det; ties go to the smallest index tuple."""
    m = ens.size
    if m > max_size:
        raise ValueError(f"brute force limited to {max_size} candidates, got {m}")
    if not 0 <= k <= m:
        raise ValueError(f"k must lie in [0, {m}]")
    best, best_val = None, NEG_INF
    for combo in itertools.combinations(range(m), k):
        val = ensemble_logdet_exact(ens, combo)
        if best is None or val > best_val:
            best, best_val = combo, val
    return best


@dataclass
class GreedyStats:
    """Operation telemetry for one greedy MAP call.

    ``updates`` counts inner-product terms spent refreshing the marginal gain
    of every unselected candidate, i.e. sum over rounds of
    ``(selected so far) * (unselected)``.
    """

    rounds: int = 0
    updates: int = 0
    gains: list[float] = field(default_factory=list)


def greedy_map_linear(
    ens: QualityDiversityEnsemble, k: int, stats: GreedyStats | None = None
) -> list[int]:
    """Incremental-Cholesky greedy MAP with plain floating-point arithmetic."""
    L = ens.linear_matrix()
    m = ens.size
    k = min(k, m)
    c = np.zeros((k, m))
    d2 = np.diag(L).copy()
    avail = np.ones(m, dtype=bool)
    selected: list[int] = []
    if k == 0:
        return selected
    j = int(np.argmax(d2))
    if not d2[j] > 0:
        return selected
    while True:
        selected.append(j)
        avail[j] = False
        if stats is not None:
            stats.gains.append(math.log(d2[j]))
        if len(selected) == k:
            break
        r = len(selected) - 1
        e = (L[j] - c[:r, j] @ c[:r]) / math.sqrt(d2[j])
        c[r] = e
        d2 = d2 - e * e
        if stats is not None:
            stats.rounds += 1
            stats.updates += len(selected) * int(avail.sum())
        score = np.where(avail, d2, -np.inf)
        j = int(np.argmax(score))
        if not score[j] > 0:
            break
    return selected


def greedy_map_log(
    ens: QualityDiversityEnsemble, k: int, stats: GreedyStats | None = None
) -> list[int]:
    """Greedy MAP carried out entirely in signed log space.

    Per candidate we keep the Cholesky row ``c_i`` as log magnitudes plus signs
    and the log of the residual variance ``d_i``. A round computes
    ``e_i = (L_ji - <c_j, c_i>) / sqrt(d_j)`` and ``d_i <- d_i - e_i**2`` with
    signed log-sum-exp, so tiny probabilities never underflow.
    """
    logL = ens.log_matrix()
    m = ens.size
    k = min(k, m)
    c_log = np.full((k, m), NEG_INF)
    c_sgn = np.ones((k, m), dtype=np.int8)
    d = np.diag(logL).copy()
    avail = np.ones(m, dtype=bool)
    selected: list[int] = []
    if k == 0:
        return selected
    j = int(np.argmax(d))
    if d[j] == NEG_INF:
        return selected
    while True:
        selected.append(j)
        avail[j] = False
        if stats is not None:
            stats.gains.append(float(d[j]))
        if len(selected) == k:
            break
        r = len(selected) - 1
        if r:
            terms = c_log[:r, j][:, None] + c_log[:r]
            signs = c_sgn[:r, j][:, None] * c_sgn[:r]
            inner, inner_sgn = _signed_logsumexp(terms, signs, axis=0)
        else:
            inner, inner_sgn = np.full(m, NEG_INF), np.ones(m, dtype=np.int8)
        # L_ji is non-negative, so its sign is +1; subtract the signed inner product
        num, num_sgn = _signed_logsumexp(
            np.vstack([logL[j], inner]), np.vstack([np.ones(m, dtype=np.int8), -inner_sgn])
        )
        e = num - 0.5 * d[j]
        c_log[r] = e
        c_sgn[r] = num_sgn
        with np.errstate(invalid="ignore"):
            gap = np.where(np.isfinite(d), 2.0 * e - d, 0.0)
        d = np.where(
            np.isfinite(d) & (gap < 0), d + _log1mexp_arr(np.minimum(gap, 0.0)), NEG_INF
        )
        if stats is not None:
            stats.rounds += 1
            stats.updates += len(selected) * int(avail.sum())
        score = np.where(avail, d, NEG_INF)
        j = int(np.argmax(score))
        if score[j] == NEG_INF:
            break
    return selected
