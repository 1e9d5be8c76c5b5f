import os
import subprocess
import sys

import numpy as np
import pytest
import shapely

from floodrisk import _backend
from floodrisk.ingest import CountTable
from floodrisk.model import ModelData
from floodrisk.simulate import make_grid_graph

needs_both = pytest.mark.skipif(len(_backend.available()) < 2, reason="compiled backend not built")


def _model(rng):
    g, _ = make_grid_graph(3, 3)
    c = np.zeros((9, 6), dtype=np.int64)
    c[:, 5] = rng.integers(50, 150, 9)
    c[:, 2] = rng.integers(0, 5, 9)
    c[:, 1] = rng.integers(0, 3, 9)
    c[:, 3] = rng.integers(1, 6, 9)
    return ModelData(CountTable(g.tract_ids, c), g)


def test_env_forces_fallback():
    env = dict(os.environ, FLOODRISK_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import floodrisk; print(floodrisk.backend)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_get_unknown():
    with pytest.raises(KeyError):
        _backend.get("fortran")


@needs_both
def test_trajectories_agree(rng):
    d = _model(rng)
    cy, py = _backend.get("cython"), _backend.get("numpy")
    for _ in range(5):
        q = rng.normal(scale=0.5, size=d.dim) + np.r_[-3.0, np.zeros(d.dim - 1)]
        p = rng.normal(size=q.size)
        g = py.logp_grad(q, d.kernel)[1]
        im = rng.uniform(0.5, 2.0, q.size)
        a = cy.trajectory(q, p, g, 0.01, 30, im, d.kernel)
        b = py.trajectory(q, p, g, 0.01, 30, im, d.kernel)
        assert a[4] == b[4]
        assert np.allclose(a[0], b[0], rtol=1e-10, atol=1e-12)
        assert np.allclose(a[1], b[1], rtol=1e-10, atol=1e-12)
        assert a[2] == pytest.approx(b[2], rel=1e-12)


@pytest.mark.parametrize("name", _backend.available())
def test_ring_contains_vs_shapely(name, rng):
    ring = np.array([(0, 0), (4, 0), (4, 3), (2, 1), (0, 3), (0, 0)], dtype=float)
    poly = shapely.Polygon(ring)
    x, y = rng.uniform(-1, 5, 2000), rng.uniform(-1, 4, 2000)
    codes = _backend.get(name).ring_contains(x, y, ring)
    want = shapely.contains_xy(poly, x, y)
    assert np.array_equal(codes == 1, want)
    # vertices and edge midpoints are boundary
    assert np.all(_backend.get(name).ring_contains([0, 2, 4], [0, 0, 1.5], ring) == 2)


@pytest.mark.parametrize("name", _backend.available())
def test_extreme_point_is_nonfinite_not_error(name, rng):
    d = _model(rng)
    lp, g = _backend.get(name).logp_grad(np.full(d.dim, 800.0), d.kernel)
    assert not np.isfinite(lp) and g.shape == (d.dim,)
