"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3]

Both implementations are imported directly, so the result does not depend on
AGGMORPH_PURE_PYTHON.  Each row also reports the largest output difference.
"""

import argparse
import time

import numpy as np

from aggmorph import _pykernels
from aggmorph.mesh import _perp_bases, convex_hull
from aggmorph.shapes import ellipsoid, icosphere, random_rotation
from aggmorph.silhouette import framed_camera, turntable_directions

try:
    from aggmorph import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _cases(rng):
    ell = ellipsoid((3.0, 4.0, 6.0), subdivisions=4, rotation=random_rotation(rng))
    cam = framed_camera(ell, turntable_directions(1, 35.0)[0], 1024)
    tri = cam.project(ell.vertices)[ell.faces]
    hull = convex_hull(ell.vertices)
    n = hull.vertices[hull.faces]
    normals = np.cross(n[:, 1] - n[:, 0], n[:, 2] - n[:, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    us, ws = _perp_bases(normals)
    grid = (rng.random((512, 512)) < 0.5).astype(np.uint8)
    circle = np.linspace(0, 2 * np.pi, 2000, endpoint=False)
    poly = np.stack([np.cos(circle), np.sin(circle)], axis=1) * (1 + 0.1 * rng.random((2000, 1)))
    rots = np.array([random_rotation(rng) for _ in range(2000)])
    cloud = icosphere(4).vertices
    return [
        ("rasterize_triangles", (tri, 1024, 1024)),
        ("marching_squares_segments", (grid,)),
        ("max_pairwise_sq", (cloud,)),
        ("box_volumes", (hull.vertices, rots)),
        ("polygon_self_intersection", (poly,)),
        ("normal_boxes", (hull.vertices, normals, us, ws)),
    ]


def _time(fn, args, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _diff(a, b):
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        return np.inf
    return float(np.abs(a - b).max()) if a.size else 0.0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s} {'max diff':>10s}")
    for name, case in _cases(rng):
        tp, op = _time(getattr(_pykernels, name), case, args.repeat)
        if _ckernels is None:
            print(f"{name:28s} {tp:11.4f} {'n/a':>11s}")
            continue
        tc, oc = _time(getattr(_ckernels, name), case, args.repeat)
        # equal-area rectangles may be flush with different edges, so compare volumes only
        d = _diff(op[0], oc[0]) if name == "normal_boxes" else _diff(op, oc)
        print(f"{name:28s} {tp:11.4f} {tc:11.4f} {tp / tc:8.1f} {d:10.2e}")


if __name__ == "__main__":
    main()
