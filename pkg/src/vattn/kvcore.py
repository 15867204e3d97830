"""Core domain types and the binary cache container.

Arrays are held as read-only float64. On disk everything is float32, so a
cache survives a write/read round trip bit-exactly only if its entries are
float32-representable (the workload generators guarantee this).
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    BadMagic,
    EmptyCache,
    EmptySelection,
    IndexOutOfRange,
    InvalidParams,
    InvalidProbability,
    IoFailure,
    NonFiniteEntry,
    ShapeMismatch,
    TruncatedFile,
    UnsupportedVersion,
)

MAGIC = b"VATN"
VERSION = 1
_HEADER = struct.Struct("<4sIQQQ")


def _frozen(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class KVCache:
    """Keys and values of one attention head, both ``n x d``."""

    keys: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        keys = _frozen(self.keys)
        values = _frozen(self.values)
        if keys.ndim != 2 or values.ndim != 2:
            raise ShapeMismatch("keys and values must be 2-D")
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.keys.shape[0]

    @property
    def d(self) -> int:
        return self.keys.shape[1]


@dataclass(frozen=True, eq=False)
class QueryBatch:
    queries: np.ndarray

    def __post_init__(self):
        q = _frozen(self.queries)
        if q.ndim == 1:
            q = _frozen(q.reshape(1, -1))
        if q.ndim != 2:
            raise ShapeMismatch("queries must be 2-D")
        object.__setattr__(self, "queries", q)

    @property
    def m(self) -> int:
        return self.queries.shape[0]

    def __len__(self):
        return self.m

    def __getitem__(self, i):
        return self.queries[i]


def _first_nonfinite(a, where):
    bad = np.argwhere(~np.isfinite(a))
    if len(bad):
        r, c = bad[0]
        raise NonFiniteEntry(int(r), int(c), where)


def validate_cache(cache: KVCache, queries: QueryBatch) -> None:
    """Raise if ``cache``/``queries`` break any type invariant."""
    if cache.n == 0 or queries.m == 0 or cache.d == 0:
        raise EmptyCache(f"n={cache.n}, m={queries.m}, d={cache.d}")
    if cache.values.shape != cache.keys.shape:
        raise ShapeMismatch(
            f"keys {cache.keys.shape} vs values {cache.values.shape}"
        )
    if queries.queries.shape[1] != cache.d:
        raise ShapeMismatch(
            f"query width {queries.queries.shape[1]} != head dim {cache.d}"
        )
    _first_nonfinite(cache.keys, "keys")
    _first_nonfinite(cache.values, "values")
    _first_nonfinite(queries.queries, "queries")


def write_cache(path, cache: KVCache, queries: QueryBatch) -> None:
    """Write the VATN v1 container (little-endian, float32 payload)."""
    validate_cache(cache, queries)
    header = _HEADER.pack(MAGIC, VERSION, cache.n, cache.d, queries.m)
    le = np.dtype("<f4")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(cache.keys, dtype=le).tobytes())
            fh.write(np.ascontiguousarray(cache.values, dtype=le).tobytes())
            fh.write(np.ascontiguousarray(queries.queries, dtype=le).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_cache(path) -> tuple[KVCache, QueryBatch]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    _, version, n, d, m = _HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version}")
    need = _HEADER.size + 4 * d * (2 * n + m)
    if len(data) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, got {len(data)}")
    payload = np.frombuffer(data, dtype="<f4", count=d * (2 * n + m),
                            offset=_HEADER.size)
    keys = payload[: n * d].reshape(n, d)
    values = payload[n * d: 2 * n * d].reshape(n, d)
    qs = payload[2 * n * d:].reshape(m, d)
    cache, queries = KVCache(keys, values), QueryBatch(qs)
    validate_cache(cache, queries)
    return cache, queries


@dataclass(frozen=True, eq=False)
class Selection:
    """Selected token indices with their inclusion probabilities.

    Deterministic entries (probability exactly 1) come first, followed by
    ``len(indices) - n_static`` sampled entries. Uniform residual sampling
    gives all sampled entries one shared probability; the LSH sampler
    assigns per-index probabilities (see :attr:`uniform_sampled`).
    """

    indices: np.ndarray
    probs: np.ndarray
    n_total: int
    n_static: int = field(default=-1)

    def __post_init__(self):
        idx = _frozen(self.indices, np.int64).reshape(-1)
        probs = _frozen(self.probs).reshape(-1)
        if idx.size == 0:
            raise EmptySelection("selection is empty")
        if idx.shape != probs.shape:
            raise ShapeMismatch("indices and probs differ in length")
        if not np.all((probs > 0) & (probs <= 1)):
            raise InvalidProbability("probabilities must lie in (0, 1]")
        if idx.min() < 0 or idx.max() >= self.n_total:
            raise IndexOutOfRange(f"index outside [0, {self.n_total})")
        if np.unique(idx).size != idx.size:
            raise IndexOutOfRange("duplicate indices in selection")
        n_static = self.n_static
        if n_static < 0:
            n_static = int(np.argmax(probs < 1)) if np.any(probs < 1) else idx.size
        if not np.all(probs[:n_static] == 1.0):
            raise InvalidProbability("static prefix must have probability 1")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "n_static", int(n_static))

    def __len__(self):
        return self.indices.size

    @property
    def density(self) -> float:
        return self.indices.size / self.n_total

    @property
    def sampled(self) -> np.ndarray:
        return self.indices[self.n_static:]

    @property
    def uniform_sampled(self) -> bool:
        tail = self.probs[self.n_static:]
        return tail.size == 0 or bool(np.all(tail == tail[0]))


class BoundKind(str, enum.Enum):
    CLT = "clt"
    HOEFFDING = "hoeffding"


class Relaxation(str, enum.Enum):
    DENOMINATOR_ONLY = "den"
    FULL = "full"


@dataclass(frozen=True)
class GuaranteeParams:
    """User contract for one vAttention call.

    ``f_*`` are fractions of ``n`` (``f_b`` is a fraction of the residual
    count). ``sink_abs``/``local_abs`` override the sink and local
    fractions with absolute token counts.
    """

    eps: float = 0.1
    delta: float = 0.1
    f_s: float = 0.01
    f_l: float = 0.01
    f_t: float = 0.05
    f_b: float = 0.05
    sink_abs: Optional[int] = None
    local_abs: Optional[int] = None
    bound_kind: BoundKind = BoundKind.CLT
    relaxation: Relaxation = Relaxation.DENOMINATOR_ONLY
    b_min: int = 32
    base_min: int = 16
    # "clamp": b in [b_min, n_s]; "none": only capped at n_s
    b_floor_rule: str = "clamp"
    range_inflation: float = 1.5
    grid_points: int = 15
    reuse_base: bool = False
    scale: bool = True

    def __post_init__(self):
        object.__setattr__(self, "bound_kind", BoundKind(self.bound_kind))
        object.__setattr__(self, "relaxation", Relaxation(self.relaxation))
        for name in ("eps", "delta"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0) or math.isnan(v):
                raise InvalidParams(f"{name}={v} must lie strictly in (0, 1)")
        fracs = (self.f_s, self.f_l, self.f_t, self.f_b)
        if any(not (0.0 <= f < 1.0) for f in fracs):
            raise InvalidParams(f"fractions {fracs} must lie in [0, 1)")
        if sum(fracs) >= 1.0:
            raise InvalidParams(f"f_s + f_l + f_t + f_b = {sum(fracs)} >= 1")
        for name in ("sink_abs", "local_abs"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise InvalidParams(f"{name} must be >= 0")
        if self.b_min < 1 or self.base_min < 1:
            raise InvalidParams("b_min and base_min must be >= 1")
        if self.b_floor_rule not in ("clamp", "none"):
            raise InvalidParams(f"unknown b_floor_rule {self.b_floor_rule!r}")
        if self.range_inflation < 1.0:
            raise InvalidParams("range_inflation must be >= 1")
        if self.grid_points < 2:
            raise InvalidParams("grid_points must be >= 2")

    def sink_count(self, n: int) -> int:
        c = self.sink_abs if self.sink_abs is not None else math.floor(self.f_s * n)
        return min(c, n)

    def local_count(self, n: int) -> int:
        c = self.local_abs if self.local_abs is not None else math.floor(self.f_l * n)
        return min(c, n)

    def topk_count(self, n: int) -> int:
        return math.floor(self.f_t * n)
