"""The compiled kernels and the numpy fallback must agree."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from aggmorph import _backend, _pykernels
from aggmorph.mesh import _perp_bases, convex_hull
from aggmorph.shapes import ellipsoid, random_rotation

ck = pytest.importorskip("aggmorph._ckernels")


@pytest.mark.parametrize("seed", range(5))
def test_rasterize_parity(seed):
    rng = np.random.default_rng(seed)
    tri = rng.uniform(-5, 70, size=(60, 3, 2))
    tri[0] = [[10, 10], [10, 10], [20, 20]]  # degenerate
    tri[1] = [[3, 3], [9, 3], [3, 9]]  # integer edges hit pixel centres
    assert np.array_equal(ck.rasterize_triangles(tri, 64, 48), _pykernels.rasterize_triangles(tri, 64, 48))


@pytest.mark.parametrize("seed", range(5))
def test_marching_squares_parity(seed):
    grid = (np.random.default_rng(seed).random((40, 33)) < 0.5).astype(np.uint8)
    assert np.array_equal(ck.marching_squares_segments(grid), _pykernels.marching_squares_segments(grid))


def test_marching_squares_tiny_grid():
    g = np.ones((1, 5), dtype=np.uint8)
    assert ck.marching_squares_segments(g).shape == _pykernels.marching_squares_segments(g).shape == (0, 4)


@pytest.mark.parametrize("seed", range(5))
def test_max_pairwise_parity(seed):
    pts = np.random.default_rng(seed).normal(size=(300, 3))
    c, p = ck.max_pairwise_sq(pts), _pykernels.max_pairwise_sq(pts)
    assert c[1:] == p[1:]
    assert c[0] == pytest.approx(p[0], rel=1e-15)


def test_max_pairwise_ties_pick_first_pair():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    assert ck.max_pairwise_sq(pts) == _pykernels.max_pairwise_sq(pts) == (2.0, 0, 3)


def test_box_volumes_parity():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(80, 3))
    rots = np.array([random_rotation(rng) for _ in range(200)])
    assert np.allclose(ck.box_volumes(pts, rots), _pykernels.box_volumes(pts, rots), rtol=1e-13, atol=0)


@pytest.mark.parametrize("seed", range(8))
def test_self_intersection_parity(seed):
    rng = np.random.default_rng(seed)
    n = 30
    t = np.sort(rng.uniform(0, 2 * np.pi, n))
    xy = np.stack([np.cos(t), np.sin(t)], axis=1) * rng.uniform(0.5, 1.5, (n, 1))
    if seed % 2:
        xy[[3, 10]] = xy[[10, 3]]  # swap two vertices to create crossings
    assert ck.polygon_self_intersection(xy) == _pykernels.polygon_self_intersection(xy)


def test_self_intersection_touching_vertex():
    xy = np.array([[0, 0], [2, 0], [2, 2], [1, 0], [0, 2]], dtype=float)
    assert ck.polygon_self_intersection(xy) == _pykernels.polygon_self_intersection(xy) != (-1, -1)


def test_normal_boxes_volume_parity():
    mesh = ellipsoid((1, 2, 3), subdivisions=2, rotation=random_rotation(np.random.default_rng(2)))
    hull = convex_hull(mesh.vertices)
    v = hull.vertices[hull.faces]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    us, ws = _perp_bases(n)
    vc, dc = ck.normal_boxes(hull.vertices, n, us, ws)
    vp, dp = _pykernels.normal_boxes(hull.vertices, n, us, ws)
    assert np.allclose(vc, vp, rtol=1e-12, atol=0)
    assert np.allclose(np.abs(dc @ n.T).diagonal(), 0, atol=1e-12)
    assert np.allclose(np.linalg.norm(dc, axis=1), 1.0)


def test_backend_selected_at_import():
    assert _backend.BACKEND == "cython"
    env = dict(os.environ, AGGMORPH_PURE_PYTHON="1")
    r = subprocess.run([sys.executable, "-c", "from aggmorph import _backend; print(_backend.BACKEND)"],
                       env=env, capture_output=True, text=True)
    assert r.stdout.strip() == "python"


_METRICS_SCRIPT = """
import json
from aggmorph.mesh import mesh_metrics
from aggmorph.shapes import ellipsoid
from aggmorph.silhouette import turntable_silhouettes
m = ellipsoid((3, 4, 6), subdivisions=2)
out = dict(mesh_metrics(m))
out["views"] = [(r["fer_2d"], r["circularity"]) for r in turntable_silhouettes(m, n_views=3, resolution=128)]
print(json.dumps(out))
"""


def test_end_to_end_metrics_match_across_backends():
    def run(flag):
        env = dict(os.environ, AGGMORPH_PURE_PYTHON=flag)
        r = subprocess.run([sys.executable, "-c", _METRICS_SCRIPT], env=env, capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
        return json.loads(r.stdout)

    c, p = run("0"), run("1")
    assert c["views"] == p["views"]
    for k in ("volume", "area", "fer_3d", "sphericity"):
        assert c[k] == pytest.approx(p[k], rel=1e-9)
