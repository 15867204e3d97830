"""Token selection strategies and their composition into a Selection."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np

from .attention import attention_scores, logits
from .errors import (
    BudgetExceedsResidual,
    CountOutOfRange,
    DegenerateVector,
    EmptyCache,
    EmptySelection,
    IndexOutOfRange,
    InvalidSpec,
)
from .kvcore import KVCache, Selection

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by ``(seed, stream_id)``.

    Backed by PCG64 seeded through ``SeedSequence``, whose output is
    platform independent.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed & _MASK64,
                                    spawn_key=(self.stream_id & _MASK64,))
        return np.random.Generator(np.random.PCG64(ss))

    @classmethod
    def derive(cls, master_seed: int, *keys: int) -> "RngStream":
        """Stream whose id is a 64-bit hash of ``(master_seed, *keys)``."""
        packed = struct.pack(f"<{len(keys) + 1}Q",
                             *(k & _MASK64 for k in (master_seed, *keys)))
        sid = int.from_bytes(hashlib.blake2b(packed, digest_size=8).digest(), "little")
        return cls(seed=master_seed, stream_id=sid)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


class SampledFragment(NamedTuple):
    """Indices drawn at random together with their inclusion probabilities."""

    indices: np.ndarray
    probs: np.ndarray


Fragment = Union[Sequence[int], np.ndarray, SampledFragment, Selection]


def sink_indices(n: int, count: int) -> np.ndarray:
    if n <= 0:
        raise EmptyCache("n must be >= 1")
    if not 0 <= count <= n:
        raise CountOutOfRange(f"sink count {count} outside [0, {n}]")
    return np.arange(count, dtype=np.int64)


def local_indices(n: int, count: int) -> np.ndarray:
    if n <= 0:
        raise EmptyCache("n must be >= 1")
    if not 0 <= count <= n:
        raise CountOutOfRange(f"local count {count} outside [0, {n}]")
    return np.arange(n - count, n, dtype=np.int64)


def _excluded_mask(n: int, excluded) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    if excluded is not None:
        ex = np.asarray(list(excluded) if isinstance(excluded, (set, frozenset)) else excluded,
                        dtype=np.int64).reshape(-1)
        if ex.size and (ex.min() < 0 or ex.max() >= n):
            raise IndexOutOfRange(f"excluded index outside [0, {n})")
        mask[ex] = True
    return mask


def oracle_topk(cache: KVCache, q, count: int, excluded=None) -> np.ndarray:
    """Indices of the ``count`` largest logits outside ``excluded``.

    Returned in rank order; ties go to the lower index.
    """
    mask = _excluded_mask(cache.n, excluded)
    available = cache.n - int(mask.sum())
    if not 0 <= count <= available:
        raise CountOutOfRange(f"top-k count {count} outside [0, {available}]")
    lg = logits(cache, q)
    order = np.argsort(-lg, kind="stable")
    return order[~mask[order]][:count]


def oracle_topp(cache: KVCache, q, p: float, scale: bool = False) -> np.ndarray:
    """Shortest descending-score prefix whose mass reaches ``p``."""
    if not 0.0 < p < 1.0:
        raise InvalidSpec(f"top-p threshold {p} must lie in (0, 1)")
    prof = attention_scores(cache, q, scale)
    csum = np.cumsum(prof.scores[prof.sorted_order])
    k = int(np.searchsorted(csum, p, side="left")) + 1
    return prof.sorted_order[: min(k, cache.n)]


def _partial_fisher_yates(pool: np.ndarray, b: int, gen: np.random.Generator) -> np.ndarray:
    pool = pool.copy()
    n = pool.size
    if b == 0:
        return pool[:0]
    picks = gen.integers(np.arange(b), n)
    for i, j in enumerate(picks):
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:b]


def uniform_residual(n: int, excluded, b: int, rng) -> SampledFragment:
    """Draw ``b`` residual indices uniformly without replacement.

    Every drawn index carries inclusion probability ``b / n_s`` where
    ``n_s`` is the residual count.
    """
    mask = _excluded_mask(n, excluded)
    pool = np.flatnonzero(~mask)
    n_s = pool.size
    if not 0 <= b <= n_s:
        raise BudgetExceedsResidual(f"b={b} but only {n_s} residual tokens")
    picked = _partial_fisher_yates(pool, b, _as_generator(rng))
    probs = np.full(b, b / n_s if n_s else 1.0)
    return SampledFragment(picked, probs)


@dataclass(frozen=True)
class LshSampler:
    k_bits: int = 4
    l_tables: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.k_bits < 1 or self.l_tables < 1:
            raise InvalidSpec("k_bits and l_tables must be >= 1")


def lsh_collision_probability(cache: KVCache, q, k_bits: int, l_tables: int) -> np.ndarray:
    """Probability that each key shares a bucket with ``q`` in at least one table."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    qn = float(np.linalg.norm(q))
    if qn == 0.0:
        raise DegenerateVector("query has zero norm")
    kn = np.linalg.norm(cache.keys, axis=1)
    cos = np.divide(cache.keys @ q, kn * qn, out=np.zeros(cache.n), where=kn > 0)
    theta = np.arccos(np.clip(cos, -1.0, 1.0))
    theta[kn == 0] = math.pi / 2
    p_c = 1.0 - theta / math.pi
    return 1.0 - (1.0 - p_c ** k_bits) ** l_tables


def lsh_selection(cache: KVCache, q, spec: LshSampler) -> Selection:
    """Sign-random-projection LSH retrieval viewed as a sampler.

    A key is retrieved when all ``k_bits`` signs agree with the query's in
    at least one of ``l_tables`` tables. Raises EmptySelection if nothing
    collides.
    """
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    probs = lsh_collision_probability(cache, q, spec.k_bits, spec.l_tables)
    gen = RngStream(spec.seed).generator()
    planes = gen.standard_normal((spec.l_tables, spec.k_bits, cache.d))
    key_bits = np.einsum("lkd,nd->lnk", planes, cache.keys) >= 0
    q_bits = np.einsum("lkd,d->lk", planes, q) >= 0
    hit = np.all(key_bits == q_bits[:, None, :], axis=2).any(axis=0)
    # a zero key hashes to all-ones bits, matching p_c = 1/2 per bit
    idx = np.flatnonzero(hit & (probs > 0))
    if idx.size == 0:
        raise EmptySelection("no key collided with the query")
    p = probs[idx]
    order = np.argsort(p < 1.0, kind="stable")
    return Selection(idx[order], p[order], cache.n)


def compose(fragments: Iterable[Fragment], n: int) -> Selection:
    """Merge deterministic index lists and sampled fragments.

    Deterministic indices are unioned (sorted, probability 1). Sampled
    entries follow in fragment order; a sampled index already present
    deterministically keeps probability 1, and the first sampled
    occurrence wins otherwise.
    """
    static: list[np.ndarray] = []
    sampled: list[tuple[np.ndarray, np.ndarray]] = []
    for frag in fragments:
        if isinstance(frag, SampledFragment):
            sampled.append((np.asarray(frag.indices, np.int64), np.asarray(frag.probs, float)))
        elif isinstance(frag, Selection):
            static.append(frag.indices[: frag.n_static])
            sampled.append((frag.sampled, frag.probs[frag.n_static:]))
        else:
            static.append(np.asarray(frag, dtype=np.int64).reshape(-1))
    for arr in static + [s[0] for s in sampled]:
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise IndexOutOfRange(f"index outside [0, {n})")

    det = np.unique(np.concatenate(static)) if static else np.empty(0, np.int64)
    seen = np.zeros(n, dtype=bool)
    seen[det] = True
    extra_idx, extra_p = [], []
    for idx, probs in sampled:
        for i, p in zip(idx.tolist(), probs.tolist()):
            if not seen[i]:
                seen[i] = True
                extra_idx.append(i)
                extra_p.append(p)
    indices = np.concatenate([det, np.asarray(extra_idx, np.int64)])
    if indices.size == 0:
        raise EmptySelection("no fragment contributed any index")
    probs = np.concatenate([np.ones(det.size), np.asarray(extra_p, float)])
    # a sampled prob of exactly 1 (exhaustive sample) is still reported as sampled
    return Selection(indices, probs, n, n_static=det.size)
