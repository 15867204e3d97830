"""Sample-size selection for verified sparse attention.

The residual population (tokens outside the deterministic set) is summed
by uniform sampling. Given plug-in statistics from a small base sample,
the functions here pick the number of residual samples ``b`` so that the
estimated denominator (and optionally the numerator and the output) is
within a relative tolerance ``eps`` with probability at least
``1 - delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Optional

import numpy as np

from .attention import AttentionOutput, logits, sdpa_selected
from .errors import EmptyBaseSample, InvalidParams, InvalidTolerance, ShapeMismatch
from .kvcore import BoundKind, GuaranteeParams, KVCache, Relaxation, Selection
from .selectors import (
    SampledFragment,
    _as_generator,
    compose,
    local_indices,
    oracle_topk,
    sink_indices,
    uniform_residual,
)

_STD_NORMAL = NormalDist()


@dataclass(frozen=True, eq=False)
class SampleStats:
    """Plug-in estimates, all in the scale ``exp(logit - shift)``."""

    trace_cov_hat: float
    sigma_hat: float
    num_norm_hat: float
    den_hat: float
    range_hat: float
    base_indices: np.ndarray
    shift: float
    static_den: float = 0.0


@dataclass(frozen=True, eq=False)
class BudgetResult:
    b: int
    kind: BoundKind
    clamped: bool
    eps_split: Optional[tuple[float, float]] = None
    raw: float = 0.0
    base_indices: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    stats: Optional[SampleStats] = None


def z_value(delta: float) -> float:
    """Two-sided standard-normal quantile ``Phi^-1(1 - delta / 2)``."""
    if not 0.0 < delta < 1.0:
        raise InvalidTolerance(f"delta={delta} must lie in (0, 1)")
    return _STD_NORMAL.inv_cdf(1.0 - delta / 2.0)


def _check(tau, n_s, spread):
    if not tau > 0 or not math.isfinite(tau):
        raise InvalidTolerance(f"tolerance tau={tau} must be positive and finite")
    if n_s < 1:
        raise InvalidTolerance(f"n_s={n_s} must be >= 1")
    if spread < 0 or not math.isfinite(spread):
        raise InvalidTolerance(f"spread={spread} must be finite and >= 0")


def clt_budget_raw(tau: float, delta: float, n_s: int, spread: float) -> float:
    _check(tau, n_s, spread)
    return (z_value(delta) * n_s * spread / tau) ** 2


def clt_budget(tau: float, delta: float, n_s: int, spread: float) -> int:
    """Normal-approximation sample size for estimating a sum of ``n_s`` terms.

    ``spread`` is the population standard deviation for scalars, or
    ``sqrt(trace(cov))`` for vectors. Not clamped.
    """
    return math.ceil(clt_budget_raw(tau, delta, n_s, spread))


def hoeffding_budget_raw(tau: float, delta: float, n_s: int, value_range: float) -> float:
    _check(tau, n_s, value_range)
    if not 0.0 < delta < 1.0:
        raise InvalidTolerance(f"delta={delta} must lie in (0, 1)")
    return n_s ** 2 * value_range ** 2 * math.log(2.0 / delta) / (2.0 * tau ** 2)


def hoeffding_budget(tau: float, delta: float, n_s: int, value_range: float) -> int:
    """Distribution-free sample size for terms confined to an interval of width ``value_range``."""
    return math.ceil(hoeffding_budget_raw(tau, delta, n_s, value_range))


def clamp_budget(raw: float, n_s: int, b_min: int = 32, rule: str = "clamp") -> tuple[int, bool]:
    """Round ``raw`` up and confine it to ``[floor, n_s]``.

    ``rule="clamp"`` uses ``b_min`` as the floor; ``rule="none"`` only
    keeps at least one sample. Returns ``(b, clamped)``.
    """
    floor = b_min if rule == "clamp" else 1
    if not math.isfinite(raw):
        return n_s, True
    b = math.ceil(raw)
    clamped = False
    if b < floor:
        b, clamped = floor, True
    if b > n_s:
        b, clamped = n_s, True
    return b, clamped


def compute_stats(cache: KVCache, q, static_set, base_sample, scale: bool = False,
                  range_inflation: float = 1.5) -> SampleStats:
    """Estimate residual-population statistics from a uniform base sample.

    The shift is the largest logit over ``static_set`` and the base
    sample. Spreads are population (``ddof=0``) statistics of the sampled
    terms; ``range_hat`` is the sampled range times ``range_inflation``.
    """
    base = np.asarray(base_sample, dtype=np.int64).reshape(-1)
    static = np.unique(np.asarray(list(static_set) if isinstance(static_set, (set, frozenset))
                                  else static_set, dtype=np.int64).reshape(-1))
    if base.size == 0:
        raise EmptyBaseSample("base sample is empty")
    if np.isin(base, static).any():
        raise ShapeMismatch("base sample overlaps the static set")
    n_s = cache.n - static.size

    lg = logits(cache, q, scale)
    shift = float(max(lg[base].max(), lg[static].max() if static.size else -np.inf))
    e_base = np.exp(lg[base] - shift)
    v_base = cache.values[base]
    terms = e_base[:, None] * v_base

    e_static = np.exp(lg[static] - shift)
    d_f = float(e_static.sum())
    n_f = e_static @ cache.values[static] if static.size else np.zeros(cache.d)
    scale_up = n_s / base.size

    return SampleStats(
        trace_cov_hat=float(terms.var(axis=0).sum()),
        sigma_hat=float(e_base.std()),
        num_norm_hat=float(np.linalg.norm(n_f + scale_up * terms.sum(axis=0))),
        den_hat=d_f + scale_up * float(e_base.sum()),
        range_hat=float(e_base.max() - e_base.min()) * range_inflation,
        base_indices=base,
        shift=shift,
        static_den=d_f,
    )


def _den_raw(eps, delta, stats, n_s, kind):
    tau = eps * stats.den_hat
    if kind == BoundKind.HOEFFDING:
        return hoeffding_budget_raw(tau, delta, n_s, stats.range_hat)
    return clt_budget_raw(tau, delta, n_s, stats.sigma_hat)


def _num_raw(eps, delta, stats, n_s, kind):
    if kind == BoundKind.HOEFFDING:
        raise InvalidParams("the numerator budget is available for the CLT bound only")
    if stats.num_norm_hat == 0.0:
        return 0.0 if stats.trace_cov_hat == 0.0 else math.inf
    return clt_budget_raw(eps * stats.num_norm_hat, delta, n_s, math.sqrt(stats.trace_cov_hat))


def budget_denominator(eps: float, delta: float, stats: SampleStats, n_s: int,
                       kind: BoundKind = BoundKind.CLT, b_min: int = 32,
                       rule: str = "clamp") -> BudgetResult:
    """Sample size for an ``(eps, delta)`` relative estimate of the softmax denominator."""
    kind = BoundKind(kind)
    raw = _den_raw(eps, delta, stats, n_s, kind)
    b, clamped = clamp_budget(raw, n_s, b_min, rule)
    return BudgetResult(b=b, kind=kind, clamped=clamped, raw=raw, stats=stats)


def budget_numerator(eps: float, delta: float, stats: SampleStats, n_s: int,
                     kind: BoundKind = BoundKind.CLT, b_min: int = 32,
                     rule: str = "clamp") -> BudgetResult:
    kind = BoundKind(kind)
    raw = _num_raw(eps, delta, stats, n_s, kind)
    b, clamped = clamp_budget(raw, n_s, b_min, rule)
    return BudgetResult(b=b, kind=kind, clamped=clamped, raw=raw, stats=stats)


def split_grid(grid_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Interior fractions used to split ``eps`` and ``delta`` between the two sums.

    The eps fractions are geometric towards both ends (the budget grows as
    the inverse square of the tolerance); delta fractions are linear and
    stay at least ``1 / grid_points`` away from either end. Both grids are
    symmetric and contain 1/2.
    """
    if grid_points < 2:
        raise InvalidParams("grid_points must be >= 2")
    half = grid_points // 2 + 1
    lo = np.geomspace(1.0 / grid_points ** 2, 0.5, half)
    eps_frac = np.concatenate([lo, 1.0 - lo[-2::-1]])
    g = 2 * half - 1
    delta_frac = np.linspace(1.0 / grid_points, 1.0 - 1.0 / grid_points, g)
    return eps_frac, delta_frac


def budget_combined(eps: float, delta: float, stats: SampleStats, n_s: int,
                    grid_points: int = 15, b_min: int = 32,
                    rule: str = "clamp") -> BudgetResult:
    """Output-level budget: split ``(eps, delta)`` between numerator and denominator.

    Minimises ``max(b_D(e'/2, d'), b_N((eps - e')/2, delta - d'))`` over a
    lattice of interior ``(e', d')``.
    """
    eps_frac, delta_frac = split_grid(grid_points)
    best = (math.inf, None)
    for fe in eps_frac:
        e1 = eps * fe
        for fd in delta_frac:
            d1 = delta * fd
            val = max(_den_raw(e1 / 2, d1, stats, n_s, BoundKind.CLT),
                      _num_raw((eps - e1) / 2, delta - d1, stats, n_s, BoundKind.CLT))
            if val < best[0]:
                best = (val, (float(e1), float(d1)))
    raw, split = best
    if split is None:
        # every lattice point needs the whole residual
        raw, split = math.inf, (eps / 2, delta / 2)
    b, clamped = clamp_budget(raw, n_s, b_min, rule)
    return BudgetResult(b=b, kind=BoundKind.CLT, clamped=clamped, eps_split=split,
                        raw=raw, stats=stats)


Predictor = Callable[[KVCache, np.ndarray, int, np.ndarray], np.ndarray]


def vattention(cache: KVCache, q, params: GuaranteeParams, rng, *,
               predictor: Optional[Predictor] = None,
               oracle_stats: bool = False) -> tuple[AttentionOutput, Selection, BudgetResult]:
    """Verified sparse attention for one query.

    Builds the sink, local and predicted top-k sets, sizes the uniform
    residual sample from base-sample statistics, and evaluates the
    importance-weighted attention over the union.

    ``predictor(cache, q, count, excluded)`` replaces the oracle top-k.
    With ``oracle_stats`` the budget is computed from exact residual
    statistics instead of a base sample (used to separate estimation noise
    from sampling noise); no base sample is then drawn.
    """
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    n = cache.n
    gen = _as_generator(rng)
    predictor = predictor or oracle_topk

    sink = sink_indices(n, params.sink_count(n))
    local = local_indices(n, params.local_count(n))
    sl = np.union1d(sink, local)
    k = min(params.topk_count(n), n - sl.size)
    top = np.asarray(predictor(cache, q, k, sl), dtype=np.int64)
    static = np.union1d(sl, top)
    n_s = n - static.size

    if n_s == 0:
        sel = compose([static], n)
        result = BudgetResult(b=0, kind=params.bound_kind, clamped=False)
        return sdpa_selected(cache, q, sel, params.scale), sel, result

    if oracle_stats:
        residual = np.setdiff1d(np.arange(n), static)
        stats = compute_stats(cache, q, static, residual, params.scale, range_inflation=1.0)
        base = np.empty(0, np.int64)
    else:
        base_size = min(max(math.ceil(params.f_b * n_s), params.base_min), n_s)
        base = uniform_residual(n, static, base_size, gen).indices
        stats = compute_stats(cache, q, static, base, params.scale, params.range_inflation)

    if params.relaxation == Relaxation.DENOMINATOR_ONLY:
        budget = budget_denominator(params.eps, params.delta, stats, n_s,
                                    params.bound_kind, params.b_min, params.b_floor_rule)
    else:
        if params.bound_kind != BoundKind.CLT:
            raise InvalidParams("the full relaxation supports the CLT bound only")
        budget = budget_combined(params.eps, params.delta, stats, n_s,
                                 params.grid_points, params.b_min, params.b_floor_rule)
    budget = BudgetResult(b=budget.b, kind=budget.kind, clamped=budget.clamped,
                          eps_split=budget.eps_split, raw=budget.raw,
                          base_indices=base, stats=stats)

    if params.reuse_base and base.size:
        extra = uniform_residual(n, np.union1d(static, base),
                                 max(budget.b - base.size, 0), gen).indices
        dyn_idx = np.concatenate([base, extra])
        dyn = SampledFragment(dyn_idx, np.full(dyn_idx.size, dyn_idx.size / n_s))
    else:
        dyn = uniform_residual(n, static, budget.b, gen)

    sel = compose([sink, local, top, dyn], n)
    return sdpa_selected(cache, q, sel, params.scale), sel, budget
