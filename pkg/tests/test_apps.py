import json
import warnings

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st

from floodrisk.apps import (INDICATORS, AppError, IndicatorTable, brute_force_placement,
                            coverage_objective, gap_analysis, greedy_placement, logistic_irls,
                            risk_adjusted_audit)
from floodrisk.graph import TractGraph
from floodrisk.simulate import make_grid_graph

from .conftest import path_graph


class TestGap:
    def _table(self):
        # columns: has_311_report, has_sensor, has_stormwater_prediction
        return IndicatorTable(("1", "2", "3", "4"), [[0, 1, 1], [1, 0, 1], [0, 0, 0], [1, 1, 1]],
                              [10, 20, 30, 40])

    def test_worked_example(self):
        rep = gap_analysis({"1", "2", "3"}, self._table())
        assert rep.lacking["has_311_report"] == ["1", "3"]
        assert rep.population["has_311_report"] == 40
        assert rep.lacking["has_sensor"] == ["2", "3"] and rep.population["has_sensor"] == 50
        assert rep.lacking_all == ["3"] and rep.population_all == 30

    def test_all_covered(self):
        rep = gap_analysis({"4"}, self._table())
        assert all(v == [] for v in rep.lacking.values()) and rep.population_all == 0

    def test_empty_set(self):
        rep = gap_analysis(set(), self._table())
        assert rep.lacking_all == [] and all(v == 0 for v in rep.population.values())

    def test_unknown_tract(self):
        with pytest.raises(AppError, match="absent"):
            gap_analysis({"9"}, self._table())

    def test_subset_monotone(self):
        t = self._table()
        small, big = gap_analysis({"1"}, t), gap_analysis({"1", "3"}, t)
        for k in INDICATORS:
            assert set(small.lacking[k]) <= set(big.lacking[k])

    def test_read_csv(self, tmp_path):
        p = tmp_path / "i.csv"
        p.write_text("# hdr\ntract_id,has_311_report,has_sensor,has_stormwater_prediction,"
                     "population,income\na,1,0,1,5,2.5\nb,0,0,0,7,1.0\n")
        t = IndicatorTable.read_csv(p)
        assert t.tract_ids == ("a", "b") and t.population.tolist() == [5, 7]
        assert t.demographics["income"].tolist() == [2.5, 1.0]

    def test_invalid_indicator(self):
        with pytest.raises(AppError):
            IndicatorTable(("a",), [[2, 0, 0]], [1])


def _audit_data(rng, n=400, b=(-0.5, 3.0, 0.8)):
    risk = rng.beta(2, 10, n)
    dem = rng.normal(50, 10, n)
    z = (dem - dem.mean()) / dem.std(ddof=1)
    p = 1 / (1 + np.exp(-(b[0] + b[1] * risk + b[2] * z)))
    return risk, (rng.random(n) < p).astype(int), dem


class TestAudit:
    def test_irls_matches_statsmodels(self, rng):
        risk, y, dem = _audit_data(rng)
        X = np.column_stack([np.ones_like(risk), risk, dem])
        fit = logistic_irls(X, y)
        ref = sm.Logit(y, X).fit(disp=0)
        assert np.allclose(fit.coef, ref.params, rtol=1e-6, atol=1e-8)
        assert np.allclose(fit.se, ref.bse, rtol=1e-5)
        assert not fit.separated

    def test_audit_coefficient_and_ci(self, rng):
        risk, y, dem = _audit_data(rng)
        res = risk_adjusted_audit(risk, y, {"income": dem})
        z = (dem - dem.mean()) / dem.std(ddof=1)
        ref = sm.Logit(y, np.column_stack([np.ones_like(risk), risk, z])).fit(disp=0)
        row = res["income"]
        assert row.coef == pytest.approx(ref.params[2], rel=1e-6)
        lo, hi = ref.conf_int(0.05)[2]
        assert row.lo == pytest.approx(lo, rel=1e-5) and row.hi == pytest.approx(hi, rel=1e-5)
        assert row.excludes_zero()

    def test_affine_invariance(self, rng):
        risk, y, dem = _audit_data(rng)
        a = risk_adjusted_audit(risk, y, {"d": dem})["d"].coef
        b = risk_adjusted_audit(risk, y, {"d": 7 * dem - 3})["d"].coef
        c = risk_adjusted_audit(risk, y, {"d": -dem})["d"].coef
        assert b == pytest.approx(a, rel=1e-9) and c == pytest.approx(-a, rel=1e-9)

    def test_joint_mode(self, rng):
        risk, y, dem = _audit_data(rng)
        other = rng.normal(size=risk.size)
        res = risk_adjusted_audit(risk, y, {"d": dem, "o": other}, joint=True)
        assert res.mode == "joint" and [r.feature for r in res.rows] == ["d", "o"]
        assert res["d"].gamma == res["o"].gamma

    def test_zero_variance(self, rng):
        risk, y, _ = _audit_data(rng, n=50)
        with pytest.raises(AppError, match="zero variance"):
            risk_adjusted_audit(risk, y, {"flat": np.ones(50)})

    def test_single_class(self, rng):
        with pytest.raises(AppError, match="single class"):
            risk_adjusted_audit(rng.random(10), np.ones(10, int), {"d": rng.normal(size=10)})

    def test_separation_flagged(self, tmp_path):
        d = np.arange(20.0)
        y = (d >= 10).astype(int)
        risk = np.linspace(0.1, 0.2, 20) ** 2
        with pytest.warns(RuntimeWarning, match="separation"):
            res = risk_adjusted_audit(risk, y, {"d": d})
        assert res["d"].separated
        res.write_csv(tmp_path / "a.csv")
        assert (tmp_path / "a.csv").read_text().splitlines()[1] == "d,,,,,,,1"


class TestPlacement:
    def test_path_coverage(self):
        g = path_graph("abcde")
        r = {"a": 0.1, "b": 0.2, "c": 0.3, "d": 0.2, "e": 0.1}
        assert coverage_objective(["c"], r, g, [], 1) == pytest.approx(0.7)
        res = greedy_placement(r, g, U=1, k=1)
        assert res.chosen == ["c"] and res.gains == [pytest.approx(0.7)]

    def test_existing_sensor(self):
        g = path_graph("abcde")
        r = np.array([0.1, 0.2, 0.3, 0.2, 0.1])
        res = greedy_placement(r, g, existing=["c"], U=1, k=1)
        # remaining uncovered a and e tie at 0.1; the smaller id wins
        assert res.chosen == ["a"] and res.objective_before == pytest.approx(0.7)

    def test_two_triangles(self):
        ids = list("abcdef")
        g = TractGraph(ids, [("a", "b"), ("b", "c"), ("a", "c"), ("d", "e"), ("e", "f"),
                             ("d", "f")])
        res = greedy_placement(np.ones(6), g, U=2, k=1)
        assert res.objective_after == 6 and res.chosen == ["a", "d"]

    def test_k_zero(self, rng):
        g, _ = make_grid_graph(3, 3)
        r = rng.random(9)
        res = greedy_placement(r, g, U=3, k=0)
        assert sorted(res.gains, reverse=True) == res.gains
        assert res.objective_after == pytest.approx(np.sort(r)[-3:].sum())

    def test_covers_everything(self, rng):
        g, _ = make_grid_graph(3, 3)
        r = rng.random(9)
        with pytest.warns(RuntimeWarning, match="candidate"):
            res = greedy_placement(r, g, U=20, k=1)
        assert res.objective_after == pytest.approx(r.sum())

    def test_brute_force_guard(self):
        g, _ = make_grid_graph(10, 10)
        with pytest.raises(AppError, match="limit"):
            brute_force_placement(np.ones(100), g, U=5, limit=1000)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 3), st.integers(0, 2))
    def test_greedy_vs_brute_force(self, seed, U, k):
        rng = np.random.default_rng(seed)
        g, _ = make_grid_graph(3, 3)
        r = rng.random(9)
        res = greedy_placement(r, g, U=U, k=k)
        opt, _ = brute_force_placement(r, g, U=U, k=k)
        assert all(a >= b - 1e-12 for a, b in zip(res.gains, res.gains[1:]))
        assert res.objective_after <= opt + 1e-12
        assert res.objective_after >= (1 - 1 / np.e) * opt - 1e-12
        if U == 1:
            assert res.objective_after == pytest.approx(opt)
        assert coverage_objective(res.chosen, r, g, [], k) == pytest.approx(res.objective_after)

    def test_outputs(self, tmp_path):
        g, polys = make_grid_graph(2, 2)
        res = greedy_placement(np.arange(4.0), g, U=2, k=0)
        res.write_csv(tmp_path / "p.csv", "hdr")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[1] == "step,tract_id,gain,objective" and len(lines) == 4
        res.write_geojson(tmp_path / "p.geojson", polys, {"k": 0})
        doc = json.loads((tmp_path / "p.geojson").read_text())
        assert len(doc["features"]) == 2 and doc["metadata"] == {"k": 0}

    def test_unknown_existing(self):
        with pytest.raises(AppError):
            greedy_placement(np.ones(3), path_graph("abc"), existing=["z"])


def test_no_warnings_on_clean_audit(rng):
    risk, y, dem = _audit_data(rng)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        risk_adjusted_audit(risk, y, {"d": dem})
