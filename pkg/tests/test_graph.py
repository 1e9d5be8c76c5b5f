import json

import numpy as np
import pytest
import shapely
from hypothesis import given, settings, strategies as st
from shapely.geometry import Polygon

from floodrisk.geometry import (BOUNDARY, INSIDE, OUTSIDE, GeometryError, TractPolygon,
                                polygon_distance, random_points_in)
from floodrisk.graph import (GraphError, TractGraph, build_adjacency, k_hop_neighborhood,
                             laplacian, polygons_from_geojson, polygons_to_geojson, read_edges_csv,
                             read_geojson, validate_graph, write_edges_csv)
from floodrisk.simulate import make_grid_graph

from .conftest import path_graph, square


def _shapely(p):
    return Polygon(p.exterior, [h for h in p.holes])


class TestTractPolygon:
    def test_unclosed_ring_rejected(self):
        with pytest.raises(GeometryError):
            TractPolygon("a", [(0, 0), (1, 0), (1, 1), (0, 1)])

    def test_zero_area_rejected(self):
        with pytest.raises(GeometryError):
            TractPolygon("a", [(0, 0), (1, 0), (2, 0), (0, 0)])

    def test_area_and_centroid_match_shapely(self, rng):
        pts = rng.random((7, 2))
        hull = shapely.convex_hull(shapely.MultiPoint(pts))
        ring = np.array(hull.exterior.coords)
        p = TractPolygon("a", ring)
        assert p.area == pytest.approx(hull.area, rel=1e-12)
        assert p.centroid() == pytest.approx((hull.centroid.x, hull.centroid.y), rel=1e-10)

    def test_classify_with_hole(self):
        p = TractPolygon("a", [(0, 0), (4, 0), (4, 4), (0, 4), (0, 0)],
                         holes=([(1, 1), (3, 1), (3, 3), (1, 3), (1, 1)],))
        codes = p.classify([0.5, 2.0, 4.0, 5.0, 1.0], [0.5, 2.0, 2.0, 5.0, 2.0])
        assert codes.tolist() == [INSIDE, OUTSIDE, BOUNDARY, OUTSIDE, BOUNDARY]

    def test_classify_matches_shapely(self, backend, rng):
        pts = rng.random((9, 2)) * 10
        hull = shapely.convex_hull(shapely.MultiPoint(pts))
        ring = np.array(hull.exterior.coords)
        q = rng.random((2000, 2)) * 12 - 1
        got = backend.ring_contains(q[:, 0], q[:, 1], ring)
        want = shapely.contains_xy(hull, q[:, 0], q[:, 1])
        assert np.array_equal(got == INSIDE, want)

    def test_random_points_inside(self, rng):
        p = TractPolygon("a", [(0, 0), (3, 0), (0, 3), (0, 0)])
        pts = random_points_in(p, 500, rng)
        assert (p.classify(pts[:, 0], pts[:, 1]) == INSIDE).all()


class TestPolygonDistance:
    @settings(max_examples=60, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.2, 3))
    def test_matches_shapely(self, dx, dy, s):
        a, b = square("a", 0, 0), square("b", dx, dy, s)
        want = _shapely(a).distance(_shapely(b))
        assert polygon_distance(a, b) == pytest.approx(want, abs=1e-9)

    def test_contained(self):
        assert polygon_distance(square("a", 0, 0, 10), square("b", 2, 2)) == 0.0


class TestBuildAdjacency:
    def test_shared_edge(self):
        g = build_adjacency([square("a", 0, 0), square("b", 1, 0)], 0.0)
        assert g.edges == (("a", "b"),)

    def test_far_apart_then_buffered(self):
        polys = [square("a", 0, 0), square("b", 11, 0)]
        assert build_adjacency(polys, 0.0).edges == ()
        assert len(build_adjacency(polys, 6.0).edges) == 1

    def test_grid_queen_adjacency(self):
        _, polys = make_grid_graph(3, 3)
        g = build_adjacency(polys, 0.1)
        deg = dict(zip(g.tract_ids, g.degree))
        assert deg["t0_0"] == 3 and deg["t1_1"] == 8
        assert len(g.edges) == 20

    def test_matches_shapely_buffer_intersection(self, rng):
        polys = []
        for k in range(12):
            c = rng.random(2) * 10
            pts = c + rng.normal(size=(6, 2))
            hull = shapely.convex_hull(shapely.MultiPoint(pts))
            polys.append(TractPolygon(f"p{k:02d}", np.array(hull.exterior.coords)))
        buf = 0.4
        g = build_adjacency(polys, buf)
        want = set()
        for i in range(len(polys)):
            for j in range(i + 1, len(polys)):
                if _shapely(polys[i]).distance(_shapely(polys[j])) <= 2 * buf:
                    want.add((polys[i].tract_id, polys[j].tract_id))
        assert set(g.edges) == want

    def test_permutation_invariant(self, rng):
        _, polys = make_grid_graph(4, 4)
        g1 = build_adjacency(polys, 0.0)
        perm = [polys[i] for i in rng.permutation(len(polys))]
        g2 = build_adjacency(perm, 0.0)
        assert {frozenset(e) for e in g1.edges} == {frozenset(e) for e in g2.edges}

    def test_duplicate_id(self):
        with pytest.raises(GraphError, match="dup"):
            build_adjacency([square("dup", 0, 0), square("dup", 1, 0)], 0.0)


class TestTractGraph:
    def test_rejects_self_loop_and_unknown(self):
        with pytest.raises(GraphError):
            TractGraph(["a", "b"], [("a", "a")])
        with pytest.raises(GraphError):
            TractGraph(["a", "b"], [("a", "z")])

    def test_components(self):
        g = TractGraph(list("abcd"), [("a", "b"), ("c", "d")])
        assert g.components.tolist() == [0, 0, 1, 1]
        rep = validate_graph(g)
        assert rep.n_components == 2 and not rep.connected


class TestLaplacian:
    def test_path(self):
        L = laplacian(path_graph("abc"))
        assert np.array_equal(L, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])

    def test_empty(self):
        assert not laplacian(TractGraph(list("ab"), [])).any()

    def test_psd_and_null_space(self, rng):
        _, polys = make_grid_graph(3, 3)
        L = laplacian(build_adjacency(polys, 0.1))
        assert np.allclose(L.sum(axis=1), 0)
        for _ in range(20):
            x = rng.normal(size=9)
            assert x @ L @ x >= -1e-12
        assert np.allclose(L @ np.ones(9), 0)


class TestKHop:
    def test_examples(self, path5):
        assert k_hop_neighborhood(path5, {"a"}, 0) == {"a"}
        assert k_hop_neighborhood(path5, {"c"}, 1) == {"b", "c", "d"}
        assert k_hop_neighborhood(path5, {"a", "e"}, 2) == set("abcde")

    def test_unknown_seed(self, path5):
        with pytest.raises(GraphError):
            k_hop_neighborhood(path5, {"z"}, 1)

    def test_monotone(self, path5):
        for k in range(4):
            assert k_hop_neighborhood(path5, {"b"}, k) <= k_hop_neighborhood(path5, {"b"}, k + 1)
            assert k_hop_neighborhood(path5, {"b"}, k) <= k_hop_neighborhood(path5, {"b", "e"}, k)


class TestFiles:
    def test_edges_roundtrip(self, tmp_path):
        g, _ = make_grid_graph(3, 3)
        p = tmp_path / "e.csv"
        write_edges_csv(g, p, "hdr")
        g2 = read_edges_csv(p, g.tract_ids)
        assert g2.edges == g.edges and g2.tract_ids == g.tract_ids

    def test_geojson_roundtrip(self, tmp_path):
        _, polys = make_grid_graph(2, 3)
        p = tmp_path / "g.geojson"
        p.write_text(json.dumps(polygons_to_geojson(polys)))
        back = read_geojson(p)
        assert [q.tract_id for q in back] == [q.tract_id for q in polys]
        assert all(np.array_equal(a.exterior, b.exterior) for a, b in zip(back, polys))

    def test_malformed_feature_named(self):
        doc = {"type": "FeatureCollection", "features": [
            {"type": "Feature", "properties": {"tract_id": "a"},
             "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 0]]]}},
            {"type": "Feature", "properties": {"tract_id": "b"},
             "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0]]]}},
        ]}
        with pytest.raises(GeometryError, match="feature 1"):
            polygons_from_geojson(doc)
