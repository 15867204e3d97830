"""Sparse-attention methods addressable by name from sweeps and the CLI.

Method strings are ``name`` or ``name:arg``:

``vattention``            verified sampling with the sweep's guarantee params
``topk:F``                oracle top-k with ``k = floor(F * n)``
``topp:P``                oracle top-p at threshold ``P``
``uniform:F``             uniform sample of ``floor(F * n)`` tokens
``hybrid:F``              half the budget top-k, half uniform over the rest
``lsh:KxL``               sink + local + sign-projection LSH sampler
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..attention import AttentionOutput, sdpa_selected
from ..budget import vattention
from ..errors import InvalidSpec
from ..kvcore import GuaranteeParams, KVCache
from ..selectors import (
    LshSampler,
    compose,
    local_indices,
    lsh_selection,
    oracle_topk,
    oracle_topp,
    sink_indices,
    uniform_residual,
)

METHODS = ("vattention", "topk", "topp", "uniform", "hybrid", "lsh")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    arg: str = ""

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        name, _, arg = text.strip().partition(":")
        if name not in METHODS:
            raise InvalidSpec(f"unknown method {name!r}; expected one of {METHODS}")
        spec = cls(name, arg)
        spec._check()
        return spec

    def _check(self):
        try:
            if self.name in ("topk", "uniform", "hybrid"):
                if not 0 < float(self.arg) <= 1:
                    raise InvalidSpec(f"{self}: fraction must lie in (0, 1]")
            elif self.name == "topp":
                if not 0 < float(self.arg) < 1:
                    raise InvalidSpec(f"{self}: threshold must lie in (0, 1)")
            elif self.name == "lsh":
                self.lsh_shape()
        except ValueError as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(f"bad argument in method {self}") from exc

    def lsh_shape(self) -> tuple[int, int]:
        k, _, l = (self.arg or "4x16").partition("x")
        return int(k), int(l)

    def __str__(self):
        return f"{self.name}:{self.arg}" if self.arg else self.name


@dataclass(frozen=True, eq=False)
class MethodResult:
    output: AttentionOutput
    density: float
    budget: int


def _count(frac: float, n: int) -> int:
    return min(max(math.floor(frac * n), 1), n)


def run_method(method: MethodSpec, cache: KVCache, q, params: GuaranteeParams,
               rng: np.random.Generator) -> MethodResult:
    n, scale = cache.n, params.scale
    if method.name == "vattention":
        out, sel, budget = vattention(cache, q, params, rng)
        touched = np.union1d(sel.indices, budget.base_indices).size
        return MethodResult(out, touched / n, budget.b)
    if method.name == "topk":
        sel = compose([oracle_topk(cache, q, _count(float(method.arg), n))], n)
        budget = 0
    elif method.name == "topp":
        sel = compose([oracle_topp(cache, q, float(method.arg), scale)], n)
        budget = 0
    elif method.name == "uniform":
        frag = uniform_residual(n, None, _count(float(method.arg), n), rng)
        sel = compose([frag], n)
        budget = len(frag.indices)
    elif method.name == "hybrid":
        total = _count(float(method.arg), n)
        top = oracle_topk(cache, q, total // 2)
        frag = uniform_residual(n, top, total - top.size, rng)
        sel = compose([top, frag], n)
        budget = len(frag.indices)
    else:
        k_bits, l_tables = method.lsh_shape()
        seed = int(rng.integers(2 ** 63))
        det = [sink_indices(n, params.sink_count(n)), local_indices(n, params.local_count(n))]
        lsh = lsh_selection(cache, q, LshSampler(k_bits, l_tables, seed))
        sel = compose(det + [lsh], n)
        budget = len(sel) - sel.n_static
    return MethodResult(sdpa_selected(cache, q, sel, scale), sel.density, budget)
