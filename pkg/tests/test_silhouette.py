import numpy as np
import pytest

from aggmorph.errors import (
    DegeneratePolygon,
    NoForeground,
    NonPositiveInput,
    OrderViolation,
    OutOfFrame,
    SelfIntersecting,
)
from aggmorph.mesh import caliper_diameter
from aggmorph.shapes import ellipsoid, icosphere, random_rotation, unit_cube
from aggmorph.silhouette import (
    RasterMask,
    SilhouettePolygon,
    ViewCamera,
    circularity_2d,
    fer_2d,
    framed_camera,
    max_feret,
    min_feret_perp,
    polygon_metrics,
    render_silhouette,
    silhouette_metrics,
    trace_boundary,
    turntable_silhouettes,
)

from oracles import pairwise_max, projection_extent, regular_polygon

SQUARE = SilhouettePolygon([[0, 0], [1, 0], [1, 1], [0, 1]])
TRIANGLE = SilhouettePolygon([[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]])


def test_sphere_render_disk_fraction():
    sphere = icosphere(3)
    cam = ViewCamera(direction=(0, 0, -1), width=512, height=512, pixel_pitch=2.2 / 511)
    mask = render_silhouette(sphere, cam)
    area = mask.foreground_count * cam.pixel_pitch ** 2
    assert area == pytest.approx(np.pi, rel=1e-2)


def test_cube_face_on_is_exact_square():
    cam = ViewCamera(direction=(0, 0, -1), width=32, height=32, pixel_pitch=0.1, center=(0.5, 0.5, 0.5))
    pix = render_silhouette(unit_cube(), cam).pixels
    rows, cols = np.nonzero(pix)
    assert pix.sum() == 100
    assert rows.max() - rows.min() == 9 and cols.max() - cols.min() == 9


def test_out_of_frame():
    cam = ViewCamera(direction=(0, 0, -1), width=32, height=32, pixel_pitch=0.1)
    with pytest.raises(OutOfFrame):
        render_silhouette(unit_cube().transformed(translation=(100, 0, 0)), cam)


def test_trace_rectangle_area():
    pix = np.zeros((40, 60), dtype=bool)
    pix[10:30, 10:50] = True
    poly = trace_boundary(RasterMask(pix))
    area, _ = polygon_metrics(poly)
    assert area == pytest.approx(800, rel=2e-2)


def test_trace_disk_area():
    yy, xx = np.mgrid[:128, :128]
    pix = (yy - 63.5) ** 2 + (xx - 63.5) ** 2 <= 50 ** 2
    area, _ = polygon_metrics(trace_boundary(RasterMask(pix)))
    assert area == pytest.approx(np.pi * 50 ** 2, rel=1e-2)


def test_trace_empty_mask():
    with pytest.raises(NoForeground):
        trace_boundary(RasterMask(np.zeros((8, 8), dtype=bool)))


def test_trace_keeps_largest_component_and_drops_holes():
    pix = np.zeros((30, 30), dtype=bool)
    pix[2:20, 2:20] = True
    pix[8:12, 8:12] = False  # hole
    pix[24:27, 24:27] = True  # speckle
    poly = trace_boundary(RasterMask(pix))
    area, _ = polygon_metrics(poly)
    assert area == pytest.approx(18 * 18 - 0.5, abs=1e-9)
    assert poly.vertices[:, 0].max() < 20


def test_trace_is_ccw_and_deterministic():
    rng = np.random.default_rng(1)
    pix = rng.random((20, 20)) > 0.4
    a = trace_boundary(RasterMask(pix))
    b = trace_boundary(RasterMask(pix))
    assert np.array_equal(a.vertices, b.vertices)
    x, y = a.vertices.T
    assert np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y) > 0


def test_polygon_metrics_reference_shapes():
    assert polygon_metrics(SQUARE) == pytest.approx((1.0, 4.0))
    area, per = polygon_metrics(TRIANGLE)
    assert area == pytest.approx(0.4330, abs=5e-5) and per == pytest.approx(3.0)
    area, per = polygon_metrics(SilhouettePolygon(regular_polygon(256)))
    assert area == pytest.approx(np.pi, rel=1e-3)
    assert per == pytest.approx(2 * np.pi, rel=1e-3)


def test_self_intersection_detected():
    bowtie = SilhouettePolygon([[0, 0], [2, 2], [2, 0], [0, 2.5]])
    with pytest.raises(SelfIntersecting):
        polygon_metrics(bowtie)


def test_clockwise_input_reversed():
    poly = SilhouettePolygon([[0, 0], [0, 1], [1, 1], [1, 0]])
    assert polygon_metrics(poly)[0] == pytest.approx(1.0)


def test_degenerate_polygon():
    with pytest.raises(DegeneratePolygon):
        SilhouettePolygon([[0, 0], [1, 1]])
    with pytest.raises(DegeneratePolygon):
        SilhouettePolygon([[0, 0], [1, 1], [2, 2]])


def test_max_feret_square_diagonal():
    l_max, angle = max_feret(SQUARE)
    assert l_max == pytest.approx(np.sqrt(2))
    assert angle == pytest.approx(np.pi / 4)  # smallest of the two diagonal angles


def test_max_feret_ellipse():
    l_max, angle = max_feret(SilhouettePolygon(regular_polygon(256, semi=(2, 1))))
    assert l_max == pytest.approx(4.0, rel=1e-3)
    assert angle == pytest.approx(0.0, abs=1e-9)


def test_max_feret_random_polygon_brute_force():
    rng = np.random.default_rng(5)
    t = np.sort(rng.uniform(0, 2 * np.pi, 50))
    r = rng.uniform(0.5, 2.0, 50)
    v = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    assert max_feret(SilhouettePolygon(v))[0] == pytest.approx(pairwise_max(v), rel=1e-15)


def test_min_feret_perp_values():
    circle = SilhouettePolygon(regular_polygon(256))
    for ang in (0.0, 0.3, 1.2):
        assert min_feret_perp(circle, ang) == pytest.approx(2.0, rel=1e-3)
    assert min_feret_perp(SilhouettePolygon(regular_polygon(256, semi=(2, 1))), 0.0) == pytest.approx(2.0)
    rect = SilhouettePolygon([[0, 0], [2, 0], [2, 1], [0, 1]])
    l_max, ang = max_feret(rect)
    l_min = min_feret_perp(rect, ang)
    assert l_min == pytest.approx(projection_extent(rect.vertices, ang))
    assert l_min == pytest.approx(1.7889, abs=5e-5)
    assert fer_2d(l_max, l_min) == pytest.approx(1.25)


def test_fer_2d_errors():
    assert fer_2d(1.0, 1.0) == 1.0
    assert fer_2d(4.0, 2.0) == 2.0
    with pytest.raises(NonPositiveInput):
        fer_2d(1.0, 0.0)
    with pytest.raises(OrderViolation):
        fer_2d(1.0, 2.0)


def test_circularity_reference_values():
    assert circularity_2d(np.pi, 2 * np.pi) == pytest.approx(1.0)
    assert circularity_2d(*polygon_metrics(SQUARE)) == pytest.approx(0.7854, abs=5e-5)
    assert circularity_2d(*polygon_metrics(TRIANGLE)) == pytest.approx(0.6046, abs=5e-5)
    with pytest.raises(NonPositiveInput):
        circularity_2d(0.0, 1.0)


def test_silhouette_metrics_scale_only_affects_lengths():
    poly = SilhouettePolygon(regular_polygon(64, semi=(3, 1)))
    a = silhouette_metrics(poly)
    b = silhouette_metrics(poly, scale=0.5)
    assert b["l_max"] == pytest.approx(a["l_max"] * 0.5)
    assert b["area"] == pytest.approx(a["area"] * 0.25)
    assert b["fer_2d"] == a["fer_2d"] and b["circularity"] == a["circularity"]


def test_render_trace_ellipsoid_projected_area():
    semi = np.array([3.0, 4.0, 6.0])
    rng = np.random.default_rng(9)
    R = random_rotation(rng)
    mesh = ellipsoid(semi, subdivisions=4, rotation=R)
    d = np.array([0.3, -0.5, -0.8])
    d /= np.linalg.norm(d)
    cam = framed_camera(mesh, d, 512)
    poly = trace_boundary(render_silhouette(mesh, cam))
    area = polygon_metrics(poly)[0] * cam.pixel_pitch ** 2
    dl = R.T @ d  # direction in the ellipsoid frame
    analytic = np.pi * np.prod(semi) * np.sqrt(np.sum((dl / semi) ** 2))
    assert area == pytest.approx(analytic, rel=2e-2)


def test_silhouette_feret_below_caliper_diameter():
    mesh = ellipsoid((2, 3, 5), subdivisions=3, rotation=random_rotation(np.random.default_rng(2)))
    diam = caliper_diameter(mesh.vertices)
    for row in turntable_silhouettes(mesh, n_views=6, resolution=256):
        pitch = framed_camera(mesh, (0, 0, -1), 256).pixel_pitch
        assert row["l_max"] <= diam + 2 * pitch
