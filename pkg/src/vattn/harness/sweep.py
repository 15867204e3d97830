"""Method sweeps, guarantee verification and CSV reporting."""

from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from ..attention import denominator_rel_error, full_sdpa, rel_error
from ..budget import vattention
from ..errors import InvalidParams, IoFailure
from ..kvcore import GuaranteeParams, KVCache, QueryBatch, Relaxation
from ..selectors import RngStream
from .methods import MethodSpec, run_method

CSV_COLUMNS = ("method", "eps", "delta", "fs", "fl", "ft", "fb", "bound", "relaxation",
               "query", "density", "budget", "rel_err_out", "rel_err_den", "seed")


@dataclass(frozen=True)
class TrialRecord:
    method: str
    eps: Optional[float]
    delta: Optional[float]
    fs: float
    fl: float
    ft: float
    fb: float
    bound: str
    relaxation: str
    query: int
    density: float
    budget: int
    rel_err_out: float
    rel_err_den: float
    seed: int


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_csv(records: Iterable[TrialRecord], path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in records:
                w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> list[TrialRecord]:
    """Parse a sweep/verify CSV back into records."""
    ints = {"query", "budget", "seed"}
    strs = {"method", "bound", "relaxation"}
    out = []
    try:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                kw = {}
                for c in CSV_COLUMNS:
                    v = row[c]
                    if c in strs:
                        kw[c] = v
                    elif v == "":
                        kw[c] = None
                    else:
                        kw[c] = int(v) if c in ints else float(v)
                out.append(TrialRecord(**kw))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return out


def _record(method, params, query, result, ref, seed, with_eps):
    return TrialRecord(
        method=str(method),
        eps=params.eps if with_eps else None,
        delta=params.delta if with_eps else None,
        fs=params.f_s, fl=params.f_l, ft=params.f_t, fb=params.f_b,
        bound=params.bound_kind.value, relaxation=params.relaxation.value,
        query=query, density=result.density, budget=int(result.budget),
        rel_err_out=rel_error(result.output.out, ref.out),
        rel_err_den=denominator_rel_error(result.output, ref),
        seed=seed,
    )


def _run_tasks(fn, tasks, workers):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def run_sweep(cache: KVCache, queries: QueryBatch, methods: Sequence, params_grid: Sequence[GuaranteeParams],
              out_path=None, seed: int = 0, workers: int = 1) -> list[TrialRecord]:
    """Evaluate every method on every query.

    ``vattention`` runs once per entry of ``params_grid``; the baselines,
    which do not consume ``eps``/``delta``, run once per query with the
    first params (for sink/local counts and the scale flag).
    """
    methods = [m if isinstance(m, MethodSpec) else MethodSpec.parse(m) for m in methods]
    if not params_grid:
        raise InvalidParams("params_grid is empty")
    refs = [full_sdpa(cache, q, params_grid[0].scale) for q in queries.queries]

    tasks = []
    for mi, method in enumerate(methods):
        grid = params_grid if method.name == "vattention" else params_grid[:1]
        for ci, params in enumerate(grid):
            for qi in range(queries.m):
                tasks.append((mi, method, ci, params, qi))

    def run(task):
        mi, method, ci, params, qi = task
        gen = RngStream.derive(seed, mi, ci, qi).generator()
        res = run_method(method, cache, queries.queries[qi], params, gen)
        return _record(method, params, qi, res, refs[qi], seed, method.name == "vattention")

    records = _run_tasks(run, tasks, workers)
    if out_path is not None:
        emit_csv(records, out_path)
    return records


@dataclass
class VerificationReport:
    """Aggregates per ``eps``; ``fail_rate`` is the observed ``delta_hat``.

    The guaranteed error is the denominator error under the
    denominator-only relaxation and the output error otherwise.
    """

    eps_grid: list[float]
    mean_err: list[float]
    p95_err: list[float]
    fail_rate: list[float]
    mean_err_out: list[float]
    mean_err_den: list[float]
    mean_density: list[float]
    mean_budget: list[float]
    pearson_corr: float
    fail_rate_oracle: Optional[list[float]] = None
    records: list[TrialRecord] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("records")
        return d


def _pearson(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 2 or x.std() == 0 or y.std() == 0:
        return math.nan
    return float(np.corrcoef(x, y)[0, 1])


def _verify_records(cache, queries, params, eps_grid, trials, seed, workers, oracle_stats, refs):
    tasks = [(ei, eps, qi, t) for ei, eps in enumerate(eps_grid)
             for qi in range(queries.m) for t in range(trials)]
    method = MethodSpec("vattention")

    def run(task):
        ei, eps, qi, t = task
        p = dataclasses.replace(params, eps=eps)
        gen = RngStream.derive(seed, ei, qi, t).generator()
        out, sel, budget = vattention(cache, queries.queries[qi], p, gen, oracle_stats=oracle_stats)
        density = np.union1d(sel.indices, budget.base_indices).size / cache.n
        return TrialRecord(
            method=str(method), eps=eps, delta=p.delta, fs=p.f_s, fl=p.f_l, ft=p.f_t, fb=p.f_b,
            bound=p.bound_kind.value, relaxation=p.relaxation.value, query=qi,
            density=density, budget=budget.b,
            rel_err_out=rel_error(out.out, refs[qi].out),
            rel_err_den=denominator_rel_error(out, refs[qi]), seed=seed)

    return _run_tasks(run, tasks, workers)


def verify_guarantee(cache: KVCache, queries: QueryBatch, params: GuaranteeParams,
                     eps_grid: Sequence[float], trials_per_eps: int = 1, seed: int = 0,
                     workers: int = 1, out_path=None,
                     with_oracle_stats: bool = False) -> VerificationReport:
    """Measure how often vAttention misses its ``eps`` target.

    With ``with_oracle_stats`` the run is repeated with exact residual
    statistics, giving the failure rate attributable to sampling alone.
    """
    if not eps_grid:
        raise InvalidParams("eps grid is empty")
    if trials_per_eps < 1:
        raise InvalidParams("trials_per_eps must be >= 1")
    eps_grid = sorted(float(e) for e in eps_grid)
    refs = [full_sdpa(cache, q, params.scale) for q in queries.queries]
    records = _verify_records(cache, queries, params, eps_grid, trials_per_eps, seed,
                              workers, False, refs)
    if out_path is not None:
        emit_csv(records, out_path)

    use_den = params.relaxation == Relaxation.DENOMINATOR_ONLY

    def per_eps(recs, fn):
        out = []
        for eps in eps_grid:
            rows = [r for r in recs if r.eps == eps]
            out.append(fn(eps, rows))
        return out

    def err(r):
        return r.rel_err_den if use_den else r.rel_err_out

    mean_err = per_eps(records, lambda e, rs: float(np.mean([err(r) for r in rs])))
    report = VerificationReport(
        eps_grid=eps_grid,
        mean_err=mean_err,
        p95_err=per_eps(records, lambda e, rs: float(np.percentile([err(r) for r in rs], 95))),
        fail_rate=per_eps(records, lambda e, rs: float(np.mean([err(r) > e for r in rs]))),
        mean_err_out=per_eps(records, lambda e, rs: float(np.mean([r.rel_err_out for r in rs]))),
        mean_err_den=per_eps(records, lambda e, rs: float(np.mean([r.rel_err_den for r in rs]))),
        mean_density=per_eps(records, lambda e, rs: float(np.mean([r.density for r in rs]))),
        mean_budget=per_eps(records, lambda e, rs: float(np.mean([r.budget for r in rs]))),
        pearson_corr=_pearson(eps_grid, mean_err),
        records=records,
    )
    if with_oracle_stats:
        orecs = _verify_records(cache, queries, params, eps_grid, trials_per_eps, seed,
                                workers, True, refs)
        report.fail_rate_oracle = per_eps(
            orecs, lambda e, rs: float(np.mean([err(r) > e for r in rs])))
    return report
