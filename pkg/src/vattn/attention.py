"""Exact and importance-weighted sparse attention for a single query."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ZeroReference
from .kvcore import KVCache, Selection


@dataclass(frozen=True, eq=False)
class AttentionOutput:
    """Attention result with its normalizer kept in log space.

    ``log_denom`` is the natural log of the (estimated) softmax
    denominator at true scale; ``logit_max`` is the shift that was used to
    exponentiate, so ``exp(log_denom - logit_max)`` is the shifted sum.
    """

    out: np.ndarray
    log_denom: float
    logit_max: float

    @property
    def denom(self) -> float:
        return math.exp(self.log_denom)

    @property
    def numerator(self) -> np.ndarray:
        return self.out * self.denom


@dataclass(frozen=True, eq=False)
class ScoreProfile:
    scores: np.ndarray
    sorted_order: np.ndarray


def logits(cache: KVCache, q, scale: bool = False) -> np.ndarray:
    """Inner products ``<K[i], q>``, divided by ``sqrt(d)`` when ``scale``."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != cache.d:
        raise ShapeMismatch(f"query width {q.shape[0]} != head dim {cache.d}")
    z = cache.keys @ q
    if scale:
        z = z / math.sqrt(cache.d)
    return z


def _weighted(lg: np.ndarray, values: np.ndarray, inv_p=None) -> AttentionOutput:
    m = float(lg.max())
    w = np.exp(lg - m)
    if inv_p is not None:
        w = w * inv_p
    s = float(w.sum())
    out = (w @ values) / s
    return AttentionOutput(out=out, log_denom=m + math.log(s), logit_max=m)


def full_sdpa(cache: KVCache, q, scale: bool = False) -> AttentionOutput:
    return _weighted(logits(cache, q, scale), cache.values)


def attention_scores(cache: KVCache, q, scale: bool = False) -> ScoreProfile:
    lg = logits(cache, q, scale)
    w = np.exp(lg - lg.max())
    scores = w / w.sum()
    # stable sort on the negated logits: ties keep the lower index first
    order = np.argsort(-lg, kind="stable")
    return ScoreProfile(scores=scores, sorted_order=order)


def sdpa_selected(cache: KVCache, q, sel: Selection,
                  scale: bool = False) -> AttentionOutput:
    """Importance-weighted attention over ``sel``.

    Each selected token contributes ``exp(logit) / p`` to both the
    numerator and the denominator; with every ``p == 1`` this is plain
    attention restricted to the selected tokens.
    """
    if sel.n_total != cache.n:
        raise ShapeMismatch(f"selection drawn for n={sel.n_total}, cache has n={cache.n}")
    lg = logits(cache, q, scale)[sel.indices]
    inv_p = None if sel.n_static == len(sel) else 1.0 / sel.probs
    return _weighted(lg, cache.values[sel.indices], inv_p)


def rel_error(est, ref) -> float:
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ShapeMismatch(f"{est.shape} vs {ref.shape}")
    denom = float(np.linalg.norm(ref))
    if denom == 0.0:
        raise ZeroReference("reference vector has zero norm")
    return float(np.linalg.norm(est - ref)) / denom


def denominator_rel_error(est: AttentionOutput, ref: AttentionOutput) -> float:
    """``|D_hat - D| / D`` evaluated from the log-space normalizers."""
    return abs(math.expm1(est.log_denom - ref.log_denom))
