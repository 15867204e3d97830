"""Command-line workbench.

Exit status: 0 on success, 1 on invalid input, 2 on file/I-O problems.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from ..errors import StorageError, ValidationError
from ..kvcore import GuaranteeParams, read_cache, write_cache
from .studies import baseline_ablation, default_populations, random_walk_mse, tightness_study
from .sweep import run_sweep, verify_guarantee
from .workloads import WorkloadSpec, gen_workload


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _strings(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_params(p, with_eps=True):
    if with_eps:
        p.add_argument("--eps", type=_floats, default=[0.1])
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--fs", type=float, default=0.01)
    p.add_argument("--fl", type=float, default=0.01)
    p.add_argument("--ft", type=float, default=0.05)
    p.add_argument("--fb", type=float, default=0.05)
    p.add_argument("--sink-abs", type=int)
    p.add_argument("--local-abs", type=int)
    p.add_argument("--bound", choices=("clt", "hoeffding"), default="clt")
    p.add_argument("--relaxation", choices=("den", "full"), default="den")
    p.add_argument("--b-min", type=int, default=32)
    p.add_argument("--reuse-base", action="store_true")
    p.add_argument("--no-scale", action="store_true",
                   help="use raw inner products instead of dividing by sqrt(d)")
    p.add_argument("--workers", type=int, default=1)


def _params(args, eps) -> GuaranteeParams:
    return GuaranteeParams(
        eps=eps, delta=args.delta, f_s=args.fs, f_l=args.fl, f_t=args.ft, f_b=args.fb,
        sink_abs=args.sink_abs, local_abs=args.local_abs, bound_kind=args.bound,
        relaxation=args.relaxation, b_min=args.b_min, reuse_base=args.reuse_base,
        scale=not args.no_scale)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="vattn", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic cache file")
    g.add_argument("--dist", choices=("zipf", "flat", "gauss", "outlier"), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--s", type=float, default=1.0)
    g.add_argument("--jitter", type=float, default=0.1)
    g.add_argument("--clusters", type=int, default=8)
    g.add_argument("--outlier-frac", type=float, default=0.01)
    g.add_argument("--outlier-gain", type=float, default=4.0)
    g.add_argument("--out", required=True)

    s = sub.add_parser("sweep", help="evaluate methods on a cache")
    s.add_argument("--cache", required=True)
    s.add_argument("--methods", type=_strings, default=["vattention"])
    _add_params(s)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    v = sub.add_parser("verify", help="measure the observed failure rate per eps")
    v.add_argument("--cache", required=True)
    v.add_argument("--eps-grid", type=_floats, required=True)
    _add_params(v, with_eps=False)
    v.add_argument("--trials", type=int, default=1)
    v.add_argument("--oracle-stats", action="store_true",
                   help="also report failure rates under exact residual statistics")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", required=True)

    a = sub.add_parser("ablate", help="oracle-top vs random-sample vs hybrid")
    a.add_argument("--n", type=int, required=True)
    a.add_argument("--budgets", type=_floats, required=True)
    a.add_argument("--dists", type=_strings, default=["zipf:2", "flat:0.1"])
    a.add_argument("--d", type=int, default=32)
    a.add_argument("--m", type=int, default=64)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)

    t = sub.add_parser("tightness", help="CLT vs Hoeffding budgets on synthetic populations")
    t.add_argument("--eps", type=float, default=0.1)
    t.add_argument("--delta", type=float, default=0.2)
    t.add_argument("--trials", type=int, default=1000)
    t.add_argument("--size", type=int, default=10_000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)

    w = sub.add_parser("walk", help="random-walk MSE under per-step bias and noise")
    w.add_argument("--mu", type=float, required=True)
    w.add_argument("--sigma", type=float, required=True)
    w.add_argument("--steps", type=int, required=True)
    w.add_argument("--trials", type=int, default=100_000)
    w.add_argument("--seed", type=int, default=0)
    return ap


def _dispatch(args) -> None:
    if args.cmd == "gen":
        spec = WorkloadSpec(args.dist, args.n, args.d, args.m, seed=args.seed, s=args.s,
                            jitter=args.jitter, clusters=args.clusters,
                            outlier_frac=args.outlier_frac, outlier_gain=args.outlier_gain)
        cache, queries = gen_workload(spec)
        write_cache(args.out, cache, queries)
    elif args.cmd == "sweep":
        cache, queries = read_cache(args.cache)
        grid = [_params(args, e) for e in args.eps]
        recs = run_sweep(cache, queries, args.methods, grid, out_path=args.out,
                         seed=args.seed, workers=args.workers)
        print(f"wrote {len(recs)} rows to {args.out}")
    elif args.cmd == "verify":
        cache, queries = read_cache(args.cache)
        params = _params(args, args.eps_grid[0] if args.eps_grid else 0.1)
        report = verify_guarantee(cache, queries, params, args.eps_grid, args.trials,
                                  seed=args.seed, workers=args.workers, out_path=args.out,
                                  with_oracle_stats=args.oracle_stats)
        summary = report.summary()
        if math.isnan(summary["pearson_corr"]):
            summary["pearson_corr"] = None
        print(json.dumps(summary, indent=2))
    elif args.cmd == "ablate":
        rows = baseline_ablation(args.n, args.budgets, args.dists, args.seed, d=args.d, m=args.m,
                             out_path=args.out)
        for r in rows:
            print(f"{r.dist:>12} {r.budget:6.3f} {r.method:>14} {r.mean_rel_err:.6g}")
    elif args.cmd == "tightness":
        rows = tightness_study(default_populations(args.size, args.seed), args.eps, args.delta,
                               args.trials, seed=args.seed, out_path=args.out)
        for r in rows:
            print(f"{r.population:>12} {r.bound:>10} b={r.budget:8.0f} "
                  f"ratio={r.budget_ratio:6.3f} fail={r.fail_rate:.4f}")
    else:
        emp, ana = random_walk_mse(args.mu, args.sigma, args.steps, args.trials, args.seed)
        print(json.dumps({"empirical_mse": emp, "analytic_mse": ana,
                          "ratio": emp / ana if ana else None}))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        _dispatch(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (StorageError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
