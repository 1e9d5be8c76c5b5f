import numpy as np
import pytest

from floodrisk.graph import GraphError, TractGraph, laplacian
from floodrisk.ingest import UNKNOWN, aggregate_counts, read_records, write_records
from floodrisk.simulate import (TruthConfig, error_rates_from_predictive, generate_dataset,
                                make_grid_graph, sample_icar, synthetic_counts)

from .conftest import path_graph


class TestGrid:
    @pytest.mark.parametrize("rows,cols,edges", [(1, 1, 0), (2, 2, 4), (3, 3, 12), (2, 5, 13)])
    def test_edge_counts(self, rows, cols, edges):
        g, polys = make_grid_graph(rows, cols)
        # rook grid: r(c-1) + c(r-1) edges
        assert g.n == rows * cols and len(g.edges) == edges == rows * (cols - 1) + cols * (rows - 1)
        assert [p.tract_id for p in polys] == list(g.tract_ids)

    def test_invalid(self):
        with pytest.raises(ValueError):
            make_grid_graph(0, 3)


class TestIcar:
    def test_sum_zero(self):
        g, _ = make_grid_graph(4, 4)
        for s in range(5):
            assert abs(sample_icar(g, s).sum()) < 1e-10

    def test_covariance_is_pseudoinverse(self):
        g = path_graph("abc")
        draws = sample_icar(g, 0, size=100_000)
        assert np.allclose(draws[0], sample_icar(g, 0, size=1)[0])
        emp = np.cov(draws, rowvar=False)
        want = np.linalg.pinv(laplacian(g))
        assert np.all(np.abs(emp - want) <= 0.02 * np.abs(want).max())

    def test_two_node_variance(self):
        g = path_graph("ab")
        d = sample_icar(g, 1, size=100_000)[:, 0]
        # L = [[1,-1],[-1,1]], pinv diagonal = 1/4; phi_a - phi_b has variance 1
        assert d.var() == pytest.approx(0.25, rel=0.02)

    def test_per_component(self):
        g = TractGraph(list("abcd"), [("a", "b"), ("c", "d")])
        phi = sample_icar(g, 0)
        assert abs(phi[:2].sum()) < 1e-12 and abs(phi[2:].sum()) < 1e-12
        with pytest.raises(GraphError):
            sample_icar(g, 0, per_component=False)

    def test_deterministic(self):
        g, _ = make_grid_graph(3, 3)
        assert np.array_equal(sample_icar(g, 9), sample_icar(g, 9))


class TestErrorRates:
    def test_consistency(self, rng):
        for _ in range(50):
            tpr, fpr, base = rng.uniform(0.3, 0.99), rng.uniform(0, 0.05), rng.uniform(0.001, 0.2)
            pos = tpr * base + fpr * (1 - base)
            ppv = tpr * base / pos
            fom = (1 - tpr) * base / (1 - pos)
            got = error_rates_from_predictive(ppv, fom, pos)
            assert np.allclose(got, (tpr, fpr, base), rtol=1e-10, atol=1e-14)


class TestGenerate:
    def test_perfect_classifier(self):
        g, polys = make_grid_graph(3, 3)
        cfg = TruthConfig(alpha=-2.0, theta_tpr=1.0, theta_fpr=0.0, images_mean=80)
        recs, truth = generate_dataset(g, polys, cfg, seed=1)
        assert np.array_equal(recs.yhat, truth.true_labels)

    def test_zero_risk_gives_fpr(self):
        g, polys = make_grid_graph(3, 3)
        cfg = TruthConfig(alpha=-40.0, beta=(), theta_fpr=0.05, images_mean=3000,
                          images_dispersion=None, n_annot_pos=0, n_annot_neg=0)
        recs, truth = generate_dataset(g, polys, cfg, seed=2)
        assert not truth.true_labels.any()
        # 27000 Bernoulli(0.05) draws: sd of the mean is about 0.0013
        assert recs.yhat.mean() == pytest.approx(0.05, abs=0.005)

    def test_annotations_match_truth(self):
        g, polys = make_grid_graph(3, 3)
        recs, truth = generate_dataset(g, polys, TruthConfig(alpha=-3.0), seed=4)
        lab = recs.label != UNKNOWN
        assert lab.sum() == 100
        assert np.array_equal(recs.label[lab], truth.true_labels[lab])
        assert recs.yhat[lab].sum() == 50

    def test_points_inside_tracts(self):
        g, polys = make_grid_graph(2, 3)
        recs, _ = generate_dataset(g, polys, TruthConfig(images_mean=30), seed=5)
        by_id = {p.tract_id: p for p in polys}
        for r in list(recs)[:200]:
            (x0, y0), (x1, y1) = by_id[r.tract_id].exterior[0], by_id[r.tract_id].exterior[2]
            assert x0 <= r.x <= x1 and y0 <= r.y <= y1

    def test_counts_total(self):
        g, polys = make_grid_graph(3, 3)
        t, recs, truth = synthetic_counts(g, polys, TruthConfig(), seed=6)
        assert np.array_equal(t.totals, truth.n_images)
        assert len(recs) == truth.n_images.sum()

    def test_deterministic(self):
        g, polys = make_grid_graph(3, 3)
        a, _ = generate_dataset(g, polys, TruthConfig(), seed=7)
        b, _ = generate_dataset(g, polys, TruthConfig(), seed=7)
        assert a.image_id.tolist() == b.image_id.tolist() and np.array_equal(a.label, b.label)

    def test_file_roundtrip(self, tmp_path):
        g, polys = make_grid_graph(3, 3)
        recs, _ = generate_dataset(g, polys, TruthConfig(images_mean=40), seed=8)
        write_records(recs, tmp_path / "r.jsonl")
        back = read_records(tmp_path / "r.jsonl")
        ids = list(g.tract_ids)
        assert np.array_equal(aggregate_counts(back, ids).counts, aggregate_counts(recs, ids).counts)
