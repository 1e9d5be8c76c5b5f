import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from sklearn.metrics import roc_auc_score

from floodrisk.baselines import (HEURISTICS, METRICS, BaselineError, auc, downsampling_experiment,
                                 heuristic_score, laplacian_smooth, ols_fit_predict, pearson,
                                 run_benchmark)
from floodrisk.graph import TractGraph
from floodrisk.ingest import UNKNOWN, CountTable, FeatureMatrix
from floodrisk.sampler import HmcConfig
from floodrisk.simulate import TruthConfig, generate_dataset, make_grid_graph

from .conftest import path_graph


def _fm(values, ids=None):
    values = np.asarray(values, dtype=float).reshape(len(values), -1)
    ids = ids or tuple(f"t{i}" for i in range(values.shape[0]))
    p = values.shape[1]
    return FeatureMatrix(ids, values, tuple(f"f{j}" for j in range(p)), (False,) * p,
                         (0.0,) * p, (1.0,) * p)


class TestHeuristics:
    def test_fraction_worked(self):
        # 9 classified positive unknown + 1 confirmed positive out of 100
        t = CountTable(("a",), [[0, 1, 9, 0, 0, 90]])
        assert heuristic_score(t, "frac_pos_classified").scores[0] == pytest.approx(0.10)

    def test_zero_image_tract(self):
        t = CountTable(("a",), [[0] * 6])
        for k in HEURISTICS:
            assert heuristic_score(t, k).scores[0] == 0.0

    def test_unknown_only(self, rng):
        c = np.zeros((5, 6), dtype=int)
        c[:, [2, 5]] = rng.integers(0, 20, (5, 2))
        t = CountTable(tuple("abcde"), c)
        assert not heuristic_score(t, "any_pos_annotation").scores.any()

    def test_fraction_times_total(self, rng):
        t = CountTable(tuple("abcdef"), rng.integers(0, 9, (6, 6)))
        f = heuristic_score(t, "frac_pos_classified").scores
        assert np.allclose(f * t.totals, heuristic_score(t, "count_pos_classified").scores)

    def test_unknown_kind(self):
        with pytest.raises(BaselineError):
            heuristic_score(CountTable(("a",), [[0] * 6]), "nope")


class TestOls:
    def test_exact_linear(self, rng):
        X = rng.normal(size=(30, 3))
        y = 2 + X @ [1.0, -0.5, 3.0]
        assert np.max(np.abs(ols_fit_predict(_fm(X), y).scores - y)) < 1e-8

    def test_intercept_only(self, rng):
        y = rng.normal(size=10)
        s = ols_fit_predict(FeatureMatrix.empty([f"t{i}" for i in range(10)]), y).scores
        assert np.allclose(s, y.mean())

    def test_large_ridge(self, rng):
        X = rng.normal(size=(40, 2))
        y = X @ [1.0, 2.0] + rng.normal(size=40)
        s = ols_fit_predict(_fm(X), y, ridge=1e12).scores
        assert np.allclose(s, y.mean(), atol=1e-8)

    def test_singular(self, rng):
        x = rng.normal(size=20)
        with pytest.raises(BaselineError, match="ridge"):
            ols_fit_predict(_fm(np.column_stack([x, 2 * x])), rng.normal(size=20))

    def test_matches_lstsq(self, rng):
        X = rng.normal(size=(25, 2))
        y = rng.normal(size=25)
        A = np.column_stack([np.ones(25), X])
        want = A @ np.linalg.lstsq(A, y, rcond=None)[0]
        assert np.allclose(ols_fit_predict(_fm(X), y).scores, want, atol=1e-12)


class TestLaplacianSmooth:
    def test_constant_fixed_point(self, path5):
        s = laplacian_smooth(np.full(5, 3.0), path5, 0.2, 50).scores
        assert np.allclose(s, 3.0, rtol=0, atol=1e-15)

    def test_hand_step(self):
        s = laplacian_smooth([1.0, 0.0, 0.0], path_graph("abc"), 0.25, 1).scores
        assert np.allclose(s, [0.75, 0.25, 0.0])

    def test_limit_is_mean(self, rng):
        g, _ = make_grid_graph(3, 4)
        x0 = rng.random(g.n)
        s = laplacian_smooth(x0, g, 0.1, 10_000).scores
        assert np.allclose(s, x0.mean(), atol=1e-6)

    def test_regular_graph_conserves_sum(self, rng):
        ids = list("abcdef")
        cycle = TractGraph(ids, list(zip(ids, ids[1:] + ids[:1])))
        x0 = rng.random(6)
        assert laplacian_smooth(x0, cycle, 0.2, 37).scores.sum() == pytest.approx(x0.sum(), rel=1e-12)

    def test_unstable_alpha_warns(self, path5):
        with pytest.warns(RuntimeWarning, match="alpha"):
            laplacian_smooth(np.arange(5.0), path5, 2.0, 1)


class TestMetrics:
    def test_pearson_examples(self):
        x = np.array([1.0, 2, 3])
        assert pearson(x, x) == pytest.approx(1.0)
        assert pearson(x, -x) == pytest.approx(-1.0)
        assert pearson(x, [2, 4, 7]) == pytest.approx(0.9934, abs=5e-5)
        assert math.isnan(pearson(x, [1, 1, 1]))

    def test_pearson_oracle_and_affine(self, rng):
        x, y = rng.normal(size=50), rng.normal(size=50)
        assert pearson(x, y) == pytest.approx(stats.pearsonr(x, y)[0], rel=1e-12)
        assert pearson(3 * x + 1, y) == pytest.approx(pearson(x, y), rel=1e-12)
        assert pearson(-2 * x, y) == pytest.approx(-pearson(x, y), rel=1e-12)

    def test_auc_examples(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auc([0.5] * 4, [0, 1, 0, 1]) == 0.5
        assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
        assert math.isnan(auc([0.1, 0.2], [1, 1]))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=40))
    def test_auc_matches_sklearn(self, pairs):
        s = np.array([p[0] for p in pairs], dtype=float)
        lab = np.array([p[1] for p in pairs])
        if lab.all() or not lab.any():
            return
        assert auc(s, lab) == pytest.approx(roc_auc_score(lab, s), abs=1e-12)
        assert auc(np.exp(s), lab) == pytest.approx(auc(s, lab), abs=1e-12)


@pytest.fixture(scope="module")
def small_city():
    g, polys = make_grid_graph(5, 5)
    cfg = TruthConfig(alpha=-3.5, images_mean=150, n_annot_pos=30, n_annot_neg=30)
    recs, truth = generate_dataset(g, polys, cfg, seed=3)
    return g, recs, truth


class TestBenchmark:
    def test_report_shape(self, small_city):
        g, recs, truth = small_city
        hmc = HmcConfig(chains=2, warmup_iters=150, sampling_iters=150, max_leapfrog_steps=64)
        rep = run_benchmark(recs, truth.features, g, [0, 1], fit_config={"hmc": hmc})
        assert rep.n_splits == 2 and not rep.failures
        assert [r[0] for r in rep.rows()][::3] == [*HEURISTICS, "ols", "laplacian", "bayes"]
        for m in rep.methods:
            for k in METRICS:
                v = rep.series(m, k)
                assert v.shape == (2,)
                ok = v[np.isfinite(v)]
                assert np.all((ok >= -1) & (ok <= 1))
        table = rep.format_table()
        assert "bayes" in table and "2 random train/test splits" in table

    def test_failure_recorded(self, small_city):
        g, recs, truth = small_city
        rep = run_benchmark(recs, truth.features, g, [0, 1], methods=["frac_pos_classified", "bogus"])
        assert len(rep.failures) == 2
        assert np.all(np.isnan(rep.series("bogus", METRICS[0])))

    def test_needs_two_seeds(self, small_city):
        g, recs, truth = small_city
        with pytest.raises(BaselineError):
            run_benchmark(recs, truth.features, g, [0])

    def test_ols_requires_features(self, small_city):
        g, recs, _ = small_city
        with pytest.raises(BaselineError, match="features"):
            run_benchmark(recs, None, g, [0, 1], methods=["ols"])

    def test_csv(self, small_city, tmp_path):
        g, recs, truth = small_city
        rep = run_benchmark(recs, truth.features, g, [0, 1], methods=list(HEURISTICS))
        rep.write_csv(tmp_path / "b.csv", "hdr")
        lines = (tmp_path / "b.csv").read_text().splitlines()
        assert lines[1] == "method,metric,mean,sd,n_splits"
        assert len(lines) == 2 + 5 * 3


def test_downsampling_factor_one(small_city):
    g, recs, truth = small_city
    hmc = HmcConfig(chains=2, warmup_iters=200, sampling_iters=300, max_leapfrog_steps=64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = downsampling_experiment(recs, truth.features, g, [1], {"hmc": hmc}, seed=0)
    assert res[1] > 0.99
    with pytest.raises(BaselineError):
        downsampling_experiment(recs, truth.features, g, [0], {"hmc": hmc}, seed=0)
