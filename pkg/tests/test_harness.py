import csv
import math

import numpy as np
import pytest

from vattn import GuaranteeParams, KVCache, QueryBatch, attention_scores
from vattn.errors import InvalidSpec, IoFailure
from vattn.harness import (
    MethodSpec,
    WorkloadSpec,
    baseline_ablation,
    combination_check,
    default_populations,
    emit_csv,
    gen_workload,
    random_walk_mse,
    read_csv,
    run_sweep,
    tightness_study,
    verify_guarantee,
)
from vattn.harness.studies import Population
from vattn.harness.sweep import CSV_COLUMNS, TrialRecord


class TestWorkloads:
    def test_flat_without_jitter(self):
        cache, qs = gen_workload(WorkloadSpec("flat", 8, 4, 2, jitter=0.0))
        np.testing.assert_allclose(attention_scores(cache, qs[0], scale=True).scores, 1 / 8)

    def test_zipf_profile(self):
        # harmonic weights 1, 1/2, 1/3, 1/4 normalised by 25/12
        cache, qs = gen_workload(WorkloadSpec("zipf", 4, 8, 3, s=1.0, seed=3))
        scores = np.sort(attention_scores(cache, qs[0], scale=True).scores)[::-1]
        np.testing.assert_allclose(scores, [0.48, 0.24, 0.16, 0.12], rtol=1e-5)

    def test_zipf_unscaled(self):
        cache, qs = gen_workload(WorkloadSpec("zipf", 5, 3, 1, s=2.0, scaled=False))
        scores = np.sort(attention_scores(cache, qs[0], scale=False).scores)[::-1]
        w = 1 / np.arange(1, 6) ** 2
        np.testing.assert_allclose(scores, w / w.sum(), rtol=1e-5)

    @pytest.mark.parametrize("dist", ["zipf", "flat", "gauss", "outlier"])
    def test_deterministic_and_f32_exact(self, dist):
        spec = WorkloadSpec(dist, 64, 8, 4, seed=11)
        (c1, q1), (c2, q2) = gen_workload(spec), gen_workload(spec)
        assert c1.keys.tobytes() == c2.keys.tobytes()
        assert c1.values.tobytes() == c2.values.tobytes()
        assert q1.queries.tobytes() == q2.queries.tobytes()
        assert np.array_equal(c1.values.astype(np.float32).astype(np.float64), c1.values)

    @pytest.mark.parametrize("kw", [
        {"dist": "cauchy"}, {"n": 0}, {"dist": "zipf", "s": 0.0},
        {"dist": "flat", "jitter": -1.0}, {"dist": "gauss", "clusters": 0},
    ])
    def test_invalid(self, kw):
        base = dict(dist="flat", n=8, d=2, m=1)
        base.update(kw)
        with pytest.raises(InvalidSpec):
            WorkloadSpec(**base)


class TestMethods:
    @pytest.mark.parametrize("text", ["bogus", "topk:0", "topk:abc", "topp:1.0", "lsh:ax2"])
    def test_bad_method(self, text):
        with pytest.raises(InvalidSpec):
            MethodSpec.parse(text)

    def test_lsh_shape(self):
        assert MethodSpec.parse("lsh:2x8").lsh_shape() == (2, 8)


@pytest.fixture(scope="module")
def small():
    return gen_workload(WorkloadSpec("gauss", 512, 16, 8, seed=2))


class TestSweep:
    def test_full_budget_methods_are_exact(self, small):
        cache, qs = small
        recs = run_sweep(cache, qs, ["topk:1.0", "uniform:1.0", "hybrid:1.0"], [GuaranteeParams()])
        assert len(recs) == 3 * qs.m
        for r in recs:
            assert r.density == 1.0
            assert r.rel_err_out < 1e-12 and r.rel_err_den < 1e-12

    def test_rows_per_config(self, small):
        cache, qs = small
        grid = [GuaranteeParams(eps=e) for e in (0.1, 0.2)]
        recs = run_sweep(cache, qs, ["vattention", "topp:0.9", "lsh:4x16"], grid, seed=3)
        assert len(recs) == (2 + 1 + 1) * qs.m
        va = [r for r in recs if r.method == "vattention"]
        assert {r.eps for r in va} == {0.1, 0.2}
        assert all(r.eps is None for r in recs if r.method != "vattention")
        assert all(0 < r.density <= 1 for r in recs)

    def test_error_falls_with_density(self):
        cache, qs = gen_workload(WorkloadSpec("flat", 2048, 16, 16, jitter=0.5, seed=4))
        fracs = [0.02, 0.05, 0.2, 0.6]
        means, sems = [], []
        for f in fracs:
            errs = [r.rel_err_out for seed in range(4)
                    for r in run_sweep(cache, qs, [f"uniform:{f}"], [GuaranteeParams()], seed=seed)]
            means.append(np.mean(errs))
            sems.append(np.std(errs, ddof=1) / math.sqrt(len(errs)))
        for i in range(len(fracs) - 1):
            assert means[i + 1] <= means[i] + 3 * math.hypot(sems[i], sems[i + 1])

    def test_parallel_matches_serial(self, small):
        cache, qs = small
        a = run_sweep(cache, qs, ["vattention", "uniform:0.1"], [GuaranteeParams()], seed=1, workers=1)
        b = run_sweep(cache, qs, ["vattention", "uniform:0.1"], [GuaranteeParams()], seed=1, workers=4)
        assert a == b


class TestCsv:
    def test_header_only(self, tmp_path):
        path = tmp_path / "e.csv"
        emit_csv([], path)
        assert path.read_text() == ",".join(CSV_COLUMNS) + "\n"

    def test_round_trip(self, tmp_path, small):
        cache, qs = small
        recs = run_sweep(cache, qs, ["vattention", "topk:0.1"], [GuaranteeParams()], seed=5)
        path = tmp_path / "r.csv"
        emit_csv(recs, path)
        assert read_csv(path) == recs

    def test_quoting(self, tmp_path):
        rec = TrialRecord("a,b", None, None, 0.0, 0.0, 0.0, 0.0, "clt", "den", 0, 1.0, 0, 0.0, 0.0, 1)
        path = tmp_path / "q.csv"
        emit_csv([rec], path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[1][0] == "a,b"

    def test_unwritable(self, tmp_path):
        with pytest.raises(IoFailure):
            emit_csv([], tmp_path / "no" / "x.csv")


class TestVerify:
    def test_zero_variance_residual(self):
        n = 300
        keys = np.zeros((n, 4))
        keys[:5, 0] = 3.0
        values = np.tile([1.0, -2.0, 0.5, 4.0], (n, 1))
        cache, qs = KVCache(keys, values), QueryBatch(np.ones((3, 4)))
        rep = verify_guarantee(cache, qs, GuaranteeParams(f_t=0.02), [0.05, 0.1, 0.2], 2, seed=0)
        assert rep.fail_rate == [0.0, 0.0, 0.0]
        assert max(r.rel_err_den for r in rep.records) < 1e-12
        assert max(r.rel_err_out for r in rep.records) < 1e-12

    def test_report_shape(self, small):
        cache, qs = small
        rep = verify_guarantee(cache, qs, GuaranteeParams(), [0.3, 0.1], 3, seed=1,
                               with_oracle_stats=True)
        assert rep.eps_grid == [0.1, 0.3]
        assert len(rep.records) == 2 * qs.m * 3
        assert all(0 <= f <= 1 for f in rep.fail_rate + rep.fail_rate_oracle)
        assert rep.mean_budget[0] >= rep.mean_budget[1]

    def test_hoeffding_fails_less_than_clt(self):
        for dist in ("gauss", "outlier", "flat", "zipf"):
            cache, qs = gen_workload(WorkloadSpec(dist, 1024, 16, 256, seed=8, jitter=1.0))
            rates = {}
            for kind in ("clt", "hoeffding"):
                p = GuaranteeParams(eps=0.1, delta=0.2, bound_kind=kind)
                rates[kind] = verify_guarantee(cache, qs, p, [0.1], 1, seed=2).fail_rate[0]
            assert rates["hoeffding"] <= rates["clt"], dist


class TestStudies:
    def test_walk_analytic(self):
        emp, ana = random_walk_mse(0.0, 1.0, 100, 100_000, seed=1)
        assert ana == 100 and abs(emp / ana - 1) < 0.05
        emp, ana = random_walk_mse(0.1, 0.0, 10, 1000)
        assert ana == pytest.approx(1.0) and emp == pytest.approx(1.0)
        assert random_walk_mse(0.1, 1.0, 100, 10)[1] == pytest.approx(200.0)

    def test_walk_invalid(self):
        with pytest.raises(InvalidSpec):
            random_walk_mse(0.0, 1.0, 0, 10)

    def test_tightness_two_point(self):
        rows = tightness_study(default_populations(10_000)[:1], 0.1, 0.2, 200)
        clt, hoef = rows
        assert hoef.budget / clt.budget == pytest.approx(2.804, abs=0.1)
        assert hoef.fail_rate < clt.fail_rate

    def test_tightness_eps_halved(self):
        pop = [Population("u", np.random.default_rng(0).uniform(0, 1, 50_000))]
        a = tightness_study(pop, 0.1, 0.2, 5)
        b = tightness_study(pop, 0.05, 0.2, 5)
        for ra, rb in zip(a, b):
            assert rb.budget / ra.budget == pytest.approx(4.0, rel=0.03)

    def test_ablation_rows(self, tmp_path):
        rows = baseline_ablation(512, [0.1, 0.5], ["zipf:2", "flat:0.1"], seed=0, m=4,
                             out_path=tmp_path / "a.csv")
        assert len(rows) == 2 * 2 * 3
        assert (tmp_path / "a.csv").read_text().startswith("dist,budget,method")

    def test_combination_small(self):
        res = combination_check(2000, seed=3)
        assert res.violations == 0 and res.eligible > 0 and res.worst_ratio < 1
