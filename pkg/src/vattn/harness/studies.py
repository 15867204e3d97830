"""Stand-alone numerical studies: baseline ablation, bound tightness,
bias compounding, and the numerator/denominator combination bound."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from ..attention import full_sdpa, rel_error
from ..budget import clamp_budget, clt_budget, hoeffding_budget
from ..errors import InvalidSpec, IoFailure
from ..kvcore import GuaranteeParams
from ..selectors import RngStream, uniform_residual
from .methods import MethodSpec, run_method
from .workloads import WorkloadSpec, gen_workload


def write_rows(rows: Sequence, path) -> None:
    """Write dataclass rows as CSV (header only when ``rows`` is empty)."""
    if not rows:
        raise InvalidSpec("nothing to write")
    cols = [f.name for f in fields(rows[0])]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([repr(v) if isinstance(v, float) else v
                            for v in (getattr(r, c) for c in cols)])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# -- baseline ablation -------------------------------------------------------

ABLATION_METHODS = {"oracle-top": "topk", "random-sample": "uniform", "hybrid": "hybrid"}


@dataclass(frozen=True)
class AblationRow:
    dist: str
    budget: float
    method: str
    mean_rel_err: float
    sem: float
    queries: int


def parse_dist(text: str, n: int, d: int, m: int, seed: int) -> WorkloadSpec:
    """``zipf:S``, ``flat:JITTER``, ``gauss:CLUSTERS`` or ``outlier:FRAC:GAIN``."""
    name, *args = text.split(":")
    try:
        vals = [float(a) for a in args]
    except ValueError as exc:
        raise InvalidSpec(f"bad distribution argument in {text!r}") from exc
    kw = {}
    if name == "zipf" and vals:
        kw["s"] = vals[0]
    elif name == "flat" and vals:
        kw["jitter"] = vals[0]
    elif name == "gauss" and vals:
        kw["clusters"] = int(vals[0])
    elif name == "outlier" and vals:
        kw["outlier_frac"] = vals[0]
        if len(vals) > 1:
            kw["outlier_gain"] = vals[1]
    return WorkloadSpec(name, n, d, m, seed=seed, **kw)


def baseline_ablation(n: int, budget_fracs: Sequence[float], dists: Sequence[str], seed: int,
                  d: int = 32, m: int = 64, out_path=None) -> list[AblationRow]:
    """Compare oracle top-k, uniform sampling and their 50/50 mix.

    All three methods see the same random stream for a given
    ``(dist, budget, query)``, so their errors are paired.
    """
    if any(not 0 < b <= 1 for b in budget_fracs):
        raise InvalidSpec("budgets must be fractions in (0, 1]")
    params = GuaranteeParams(f_s=0.0, f_l=0.0, f_t=0.0, f_b=0.0)
    rows = []
    for di, dist in enumerate(dists):
        cache, queries = gen_workload(parse_dist(dist, n, d, m, seed))
        refs = [full_sdpa(cache, q, params.scale) for q in queries.queries]
        for bi, frac in enumerate(budget_fracs):
            for label, name in ABLATION_METHODS.items():
                method = MethodSpec(name, repr(float(frac)))
                errs = []
                for qi, q in enumerate(queries.queries):
                    gen = RngStream.derive(seed, di, bi, qi).generator()
                    res = run_method(method, cache, q, params, gen)
                    errs.append(rel_error(res.output.out, refs[qi].out))
                errs = np.asarray(errs)
                rows.append(AblationRow(dist, float(frac), label, float(errs.mean()),
                                        float(errs.std(ddof=1) / math.sqrt(errs.size)) if errs.size > 1 else 0.0,
                                        int(errs.size)))
    if out_path is not None:
        write_rows(rows, out_path)
    return rows


# -- CLT vs Hoeffding tightness ---------------------------------------------

@dataclass(frozen=True)
class Population:
    """Residual terms ``exp(logit)`` plus a deterministic part of total ``static_mass``."""

    name: str
    values: np.ndarray
    static_mass: float = 0.0

    @property
    def total(self) -> float:
        return self.static_mass + float(self.values.sum())


def default_populations(size: int = 10_000, seed: int = 0) -> list[Population]:
    rng = np.random.default_rng(seed)
    two_point = np.where(np.arange(size) % 2 == 0, 1.0, 1e-3)
    return [
        Population("two-point", two_point),
        Population("uniform", rng.uniform(0.0, 1.0, size)),
        Population("exponential", np.minimum(rng.exponential(1.0, size), 8.0)),
        Population("lognormal", rng.lognormal(0.0, 0.5, size)),
    ]


@dataclass(frozen=True)
class TightnessRow:
    population: str
    bound: str
    eps: float
    delta: float
    n_s: int
    budget: float
    budget_ratio: float
    mean_rel_err: float
    p95_rel_err: float
    fail_rate: float
    trials: int


def tightness_study(populations: Sequence[Population], eps: float, delta: float, trials: int,
                    seed: int = 0, out_path=None) -> list[TightnessRow]:
    """Size the denominator sample with both bounds from exact population statistics,
    then measure the realised relative error of the scaled sample sum."""
    if trials < 1:
        raise InvalidSpec("trials must be >= 1")
    rows = []
    for pi, pop in enumerate(populations):
        vals = np.asarray(pop.values, float)
        n_s = vals.size
        tau = eps * pop.total
        budgets = {
            "clt": clt_budget(tau, delta, n_s, float(vals.std())),
            "hoeffding": hoeffding_budget(tau, delta, n_s, float(vals.max() - vals.min())),
        }
        for bi, (bound, raw) in enumerate(budgets.items()):
            b, _ = clamp_budget(raw, n_s, b_min=1, rule="none")
            gen = RngStream.derive(seed, pi, bi).generator()
            errs = np.empty(trials)
            for t in range(trials):
                idx = uniform_residual(n_s, None, b, gen).indices
                est = pop.static_mass + n_s / b * vals[idx].sum()
                errs[t] = abs(est - pop.total) / pop.total
            rows.append(TightnessRow(pop.name, bound, eps, delta, n_s, float(b),
                                     budgets[bound] / max(budgets["clt"], 1),
                                     float(errs.mean()), float(np.percentile(errs, 95)),
                                     float(np.mean(errs > eps)), trials))
    if out_path is not None:
        write_rows(rows, out_path)
    return rows


# -- bias compounding --------------------------------------------------------

def random_walk_mse(mu: float, sigma: float, steps: int, trials: int, seed: int = 0,
                    chunk: int = 10_000) -> tuple[float, float]:
    """Mean squared terminal displacement of walks with N(mu, sigma^2) steps.

    Returns ``(empirical, analytic)`` with analytic ``steps^2 mu^2 + steps sigma^2``.
    """
    if steps < 1 or trials < 1 or sigma < 0 or not math.isfinite(mu):
        raise InvalidSpec("need steps >= 1, trials >= 1, sigma >= 0")
    gen = np.random.default_rng(seed)
    acc = 0.0
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        walk = (mu + sigma * gen.standard_normal((k, steps))).sum(axis=1)
        acc += float(np.square(walk).sum())
        done += k
    return acc / trials, steps ** 2 * mu ** 2 + steps * sigma ** 2


# -- combination bound -------------------------------------------------------

@dataclass(frozen=True)
class CombinationResult:
    trials: int
    eligible: int
    violations: int
    worst_ratio: float


def combination_check(trials: int = 100_000, d: int = 16, seed: int = 0) -> CombinationResult:
    """Check ``||N^/D^ - N/D|| <= 2 (e1 + e2) ||N/D||`` on random perturbations.

    ``e1``/``e2`` are the realised relative errors of the numerator and
    denominator; trials with ``e2 >= 0.5`` are skipped. ``worst_ratio`` is
    the largest observed lhs/rhs.
    """
    gen = np.random.default_rng(seed)
    num = gen.standard_normal((trials, d)) * gen.lognormal(0, 2, (trials, 1))
    den = gen.lognormal(0, 2, trials)
    direction = gen.standard_normal((trials, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    e1_target = gen.uniform(0, 1.5, trials)
    e2_target = gen.uniform(-0.6, 0.6, trials)
    num_hat = num + direction * (e1_target * np.linalg.norm(num, axis=1))[:, None]
    den_hat = den * (1 + e2_target)

    e1 = np.linalg.norm(num_hat - num, axis=1) / np.linalg.norm(num, axis=1)
    e2 = np.abs(den_hat - den) / den
    ok = e2 < 0.5
    exact = num / den[:, None]
    lhs = np.linalg.norm(num_hat / den_hat[:, None] - exact, axis=1)
    rhs = 2 * (e1 + e2) * np.linalg.norm(exact, axis=1)
    ratio = np.divide(lhs, rhs, out=np.zeros(trials), where=rhs > 0)
    return CombinationResult(trials, int(ok.sum()), int(np.sum(ok & (lhs > rhs))),
                             float(ratio[ok].max()) if ok.any() else 0.0)
