"""Synthetic KV caches with controlled attention-score profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidSpec
from ..kvcore import KVCache, QueryBatch

DISTS = ("zipf", "flat", "gauss", "outlier")


@dataclass(frozen=True)
class WorkloadSpec:
    """Workload family and its knobs.

    ``zipf`` and ``flat`` place the designed logits on the first key
    coordinate, so the first query (``e_0``) sees them exactly; the other
    queries add a small perturbation on the remaining coordinates.
    ``scaled`` means logits are designed for attention that divides by
    ``sqrt(d)``.
    """

    dist: str
    n: int
    d: int
    m: int
    seed: int = 0
    s: float = 1.0
    jitter: float = 0.1
    clusters: int = 8
    outlier_frac: float = 0.01
    outlier_gain: float = 4.0
    query_noise: float = 0.3
    value_coupling: float = 1.0
    scaled: bool = True

    def __post_init__(self):
        if self.dist not in DISTS:
            raise InvalidSpec(f"unknown distribution {self.dist!r}; expected one of {DISTS}")
        if min(self.n, self.d, self.m) < 1:
            raise InvalidSpec("n, d, m must all be >= 1")
        if self.dist == "zipf" and not self.s > 0:
            raise InvalidSpec("zipf exponent s must be > 0")
        if self.dist == "flat" and self.jitter < 0:
            raise InvalidSpec("jitter must be >= 0")
        if self.dist == "gauss" and self.clusters < 1:
            raise InvalidSpec("clusters must be >= 1")
        if self.dist == "outlier" and not (0 <= self.outlier_frac <= 1 and self.outlier_gain >= 0):
            raise InvalidSpec("outlier_frac must lie in [0, 1] and outlier_gain >= 0")
        if self.query_noise < 0:
            raise InvalidSpec("query_noise must be >= 0")


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _designed_first_column(spec, rng, base_logits):
    n, d = spec.n, spec.d
    gain = math.sqrt(d) if spec.scaled else 1.0
    keys = np.zeros((n, d))
    keys[:, 0] = base_logits * gain
    if d > 1:
        keys[:, 1:] = rng.standard_normal((n, d - 1))
    queries = np.zeros((spec.m, d))
    queries[:, 0] = 1.0
    if d > 1 and spec.m > 1:
        queries[1:, 1:] = spec.query_noise * rng.standard_normal((spec.m - 1, d - 1))
    return keys, queries


def _values(spec, rng, keys):
    """Values share structure with keys, as both project the same hidden state."""
    n, d = keys.shape
    std = keys.std(axis=0)
    std[std == 0] = 1.0
    kz = (keys - keys.mean(axis=0)) / std
    bias = rng.standard_normal(d)
    mix = rng.standard_normal((d, d)) / math.sqrt(d)
    # the designed score feature gets its own direction of unit weight
    mix[0] = rng.standard_normal(d)
    return bias + spec.value_coupling * (kz @ mix) + rng.standard_normal((n, d))


def gen_workload(spec: WorkloadSpec) -> tuple[KVCache, QueryBatch]:
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n, spec.d
    if spec.dist == "zipf":
        ranks = rng.permutation(n) + 1
        keys, queries = _designed_first_column(spec, rng, -spec.s * np.log(ranks))
    elif spec.dist == "flat":
        keys, queries = _designed_first_column(spec, rng, spec.jitter * rng.standard_normal(n))
    elif spec.dist == "gauss":
        centers = 0.5 * rng.standard_normal((spec.clusters, d))
        keys = centers[rng.integers(spec.clusters, size=n)] + rng.standard_normal((n, d))
        queries = centers[rng.integers(spec.clusters, size=spec.m)] + rng.standard_normal((spec.m, d))
    else:
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        keys = rng.standard_normal((n, d))
        n_out = int(round(spec.outlier_frac * n))
        hot = rng.choice(n, size=n_out, replace=False)
        keys[hot] += spec.outlier_gain * math.sqrt(d) * u
        queries = rng.standard_normal((spec.m, d)) + u
    values = _values(spec, rng, keys)
    return KVCache(_f32(keys), _f32(values)), QueryBatch(_f32(queries))
