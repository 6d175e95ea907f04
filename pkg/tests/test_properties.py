"""Module invariants checked over 100 seeded random instances each."""

import json

import numpy as np
import pytest

from aggmorph import io
from aggmorph.cli import main
from aggmorph.mesh import (
    convex_hull,
    fer_3d,
    mesh_metrics,
    min_volume_obb,
    signed_volume,
    sphericity_3d,
    surface_area,
    validate_mesh,
)
from aggmorph.registration import (
    BackgroundMarker,
    KnownDistance,
    MarkerAnnotation,
    ObjectMarker,
    SimilarityTransform,
    apply_similarity,
    estimate_similarity,
    localize_marker,
    scale_morphology,
)
from aggmorph.report import (
    VolumePair,
    comparison_tables,
    cov,
    envelope_check,
    mape,
    mesh_block,
    mpe,
    summarize_sample,
)
from aggmorph.sfm import (
    SfmScene,
    bundle_adjust,
    generate_turntable_scene,
    masked_error,
    perturb_scene,
    project,
    projection_matrix,
    rodrigues,
    total_error,
)
from aggmorph.shapes import random_rotation
from aggmorph.silhouette import (
    SilhouettePolygon,
    circularity_2d,
    fer_2d,
    max_feret,
    min_feret_perp,
    polygon_metrics,
)

from oracles import pairwise_max

N = 100
SEEDS = range(N)


def _rng(tag, seed):
    return np.random.default_rng([sum(map(ord, tag)), seed])


def _random_hull(rng, n=25):
    return convex_hull(rng.normal(size=(n, 3)) * rng.uniform(0.3, 3.0, 3))


def _random_polygon(rng, n=None):
    n = n or int(rng.integers(5, 40))
    t = np.sort(rng.uniform(0, 2 * np.pi, n))
    r = rng.uniform(0.3, 2.0, n)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1)


def _rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


# -- mesh geometry ---------------------------------------------------------------------


def test_mesh_rigid_invariance():
    for seed in SEEDS:
        rng = _rng("rigid", seed)
        m = _random_hull(rng)
        R, t = random_rotation(rng), rng.normal(size=3) * 10
        moved = m.transformed(rotation=R, translation=t)
        v0, v1 = signed_volume(m), signed_volume(moved)
        assert abs(v1 - v0) <= 1e-9 * v0
        assert surface_area(moved) == pytest.approx(surface_area(m), rel=1e-9)
        e0, e1 = min_volume_obb(m.vertices).extents, min_volume_obb(moved.vertices).extents
        assert np.all(np.abs(e1 - e0) <= 1e-9 * e0.max())


def test_mesh_scaling_law():
    for seed in SEEDS:
        rng = _rng("scale", seed)
        m = _random_hull(rng)
        s = rng.uniform(0.1, 10.0)
        big = m.transformed(scale=s)
        assert signed_volume(big) == pytest.approx(s ** 3 * signed_volume(m), rel=1e-9)
        assert surface_area(big) == pytest.approx(s ** 2 * surface_area(m), rel=1e-9)
        b0, b1 = min_volume_obb(m.vertices), min_volume_obb(big.vertices)
        assert np.allclose(b1.extents, s * b0.extents, rtol=1e-9, atol=0)
        assert fer_3d(b1) == pytest.approx(fer_3d(b0), rel=1e-9)
        assert sphericity_3d(signed_volume(big), surface_area(big)) == pytest.approx(
            sphericity_3d(signed_volume(m), surface_area(m)), rel=1e-9)


def test_sphericity_isoperimetric_bound():
    for seed in SEEDS:
        rng = _rng("sph", seed)
        m = _random_hull(rng, int(rng.integers(4, 60)))
        assert sphericity_3d(signed_volume(m), surface_area(m)) <= 1 + 1e-9


def test_obb_not_below_hull_volume_and_fer_bound():
    for seed in SEEDS:
        rng = _rng("obb", seed)
        m = _random_hull(rng)
        box = min_volume_obb(m.vertices)
        scale = np.ptp(m.vertices, axis=0).max()
        assert box.volume >= signed_volume(m) - 1e-9 * scale ** 3
        a, b, c = box.dims
        assert fer_3d(box) >= max(c / b, b / a)


def test_hull_is_valid_and_contains_points():
    for seed in SEEDS:
        rng = _rng("hull", seed)
        pts = rng.normal(size=(int(rng.integers(8, 120)), 3)) * rng.uniform(0.2, 5, 3)
        hull = convex_hull(pts)
        validate_mesh(hull)
        v, f = hull.vertices, hull.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        off = np.einsum("ij,ij->i", n, v[f[:, 0]])
        diam = np.linalg.norm(np.ptp(pts, axis=0))
        assert np.all(pts @ n.T - off <= 1e-9 * diam)


# -- silhouettes -----------------------------------------------------------------------


def _poly_indicators(v):
    poly = SilhouettePolygon(v)
    l_max, ang = max_feret(poly)
    area, per = polygon_metrics(poly)
    return fer_2d(l_max, min_feret_perp(poly, ang)), circularity_2d(area, per)


def test_silhouette_similarity_invariance():
    for seed in SEEDS:
        rng = _rng("sim2", seed)
        v = _random_polygon(rng)
        w = rng.uniform(0.05, 20.0) * v @ _rot2(rng.uniform(0, 2 * np.pi)).T + rng.normal(size=2) * 50
        f0, c0 = _poly_indicators(v)
        f1, c1 = _poly_indicators(w)
        assert f1 == pytest.approx(f0, rel=1e-9)
        assert c1 == pytest.approx(c0, rel=1e-9)


def test_silhouette_bounds():
    for seed in SEEDS:
        rng = _rng("bound2", seed)
        f, c = _poly_indicators(_random_polygon(rng))
        assert c <= 1 + 1e-9
        assert f >= 1.0


def test_max_feret_equals_brute_force():
    for seed in SEEDS:
        rng = _rng("feret", seed)
        v = _random_polygon(rng)
        assert max_feret(SilhouettePolygon(v))[0] == pytest.approx(pairwise_max(v), rel=1e-15)


# -- registration ----------------------------------------------------------------------


def _random_similarity(rng):
    return SimilarityTransform(random_rotation(rng), rng.normal(size=3) * 5, rng.uniform(0.1, 10.0))


def test_similarity_exact_recovery():
    for seed in SEEDS:
        rng = _rng("umeyama", seed)
        T = _random_similarity(rng)
        P = rng.normal(size=(int(rng.integers(3, 30)), 3))
        est, _ = estimate_similarity(P, apply_similarity(T, P))
        assert np.linalg.norm(est.rotation - T.rotation) < 1e-9
        assert est.scale == pytest.approx(T.scale, rel=1e-9)


def test_similarity_residual_optimality():
    rng = _rng("optimal", 0)
    P = rng.normal(size=(12, 3))
    Q = apply_similarity(_random_similarity(rng), P) + rng.normal(scale=0.05, size=P.shape)
    T, rms = estimate_similarity(P, Q)

    def rms_of(t):
        return np.sqrt(np.mean(np.sum((apply_similarity(t, P) - Q) ** 2, axis=1)))

    assert rms_of(T) == pytest.approx(rms, rel=1e-9)
    for _ in range(N):
        dR = rodrigues(rng.normal(scale=1e-3, size=3))
        pert = SimilarityTransform(dR @ T.rotation, T.translation + rng.normal(scale=1e-3, size=3),
                                   T.scale * (1 + rng.normal(scale=1e-3)))
        assert rms_of(pert) >= rms_of(T) - 1e-12


def test_calibration_ratio_invariance():
    for seed in SEEDS:
        rng = _rng("calib", seed)
        m = mesh_metrics(_random_hull(rng))
        s = rng.uniform(0.1, 50.0)
        out = scale_morphology(m, s)
        assert out["volume"] == pytest.approx(m["volume"] * s ** 3, rel=1e-9)
        for k in ("fer_3d", "sphericity", "c_over_b", "b_over_a"):
            assert out[k] == m[k]


def test_localize_exact_pixels():
    for seed in SEEDS:
        rng = _rng("dlt", seed)
        _, truth = generate_turntable_scene(n_views=int(rng.integers(2, 6)), object_points=4, seed=seed)
        cams = {f"v{i}": projection_matrix(c) for i, c in enumerate(truth.cameras)}
        X = rng.uniform(-8, 8, 3)
        anns = [MarkerAnnotation(k, "red", "head", tuple(project(P, X))) for k, P in cams.items()]
        est, _ = localize_marker(anns, cams)
        assert np.abs(est - X).max() < 1e-6


# -- masked sfm ------------------------------------------------------------------------


def _small_scene(seed):
    scene, _ = generate_turntable_scene(n_views=3, object_points=8, pixel_noise_std=1.0, seed=seed)
    return scene


def test_all_ones_mask_equals_total_error():
    for seed in SEEDS:
        scene = _small_scene(seed)
        assert masked_error(scene.with_weights(np.ones(scene.n_observations))) == total_error(scene)


def test_mask_nullity_property():
    for seed in SEEDS:
        rng = _rng("null", seed)
        scene = _small_scene(seed)
        w = (rng.random(scene.n_observations) < 0.7).astype(float)
        a = scene.with_weights(w)
        px = a.pixels.copy()
        px[w == 0] += rng.normal(scale=1e3, size=((w == 0).sum(), 2))
        b = SfmScene(a.cameras, a.points, a.cam_idx, a.pt_idx, px, w)
        assert masked_error(b) == masked_error(a)


@pytest.mark.parametrize("seed", range(10))
def test_lm_accepted_objectives_non_increasing(seed):
    scene, _ = generate_turntable_scene(n_views=4, object_points=20, pixel_noise_std=0.5, seed=seed)
    _, rep = bundle_adjust(perturb_scene(scene, np.random.default_rng(seed), rot_deg=5))
    obj = rep.accepted_objectives
    assert all(b <= a for a, b in zip(obj, obj[1:]))


# -- report ----------------------------------------------------------------------------


def test_mape_bounds_mpe_and_sign():
    for seed in SEEDS:
        rng = _rng("mpe", seed)
        m = rng.uniform(100, 1000, int(rng.integers(1, 20)))
        r = m * (1 + rng.normal(scale=0.05, size=len(m)))
        pairs = [VolumePair(str(i), a, b) for i, (a, b) in enumerate(zip(m, r))]
        assert mape(pairs) >= abs(mpe(pairs)) - 1e-12
        over = [VolumePair(p.sample_id, p.measured, p.measured * (1 + abs(p.reconstructed / p.measured - 1)) + 1e-9)
                for p in pairs]
        assert mpe(over) > 0
        assert mape(over) == pytest.approx(mpe(over), rel=1e-12)


def test_cov_scale_invariance():
    for seed in SEEDS:
        rng = _rng("cov", seed)
        x = rng.uniform(0.5, 3.0, int(rng.integers(2, 30)))
        k = rng.uniform(0.01, 100.0)
        assert cov(k * x) == pytest.approx(cov(x), rel=1e-12)


def test_envelope_relabel_invariance():
    for seed in SEEDS:
        rng = _rng("env", seed)
        a, b, c = np.sort(rng.uniform(1, 5, 3))
        f = rng.uniform(1, 2)
        rec = summarize_sample("s", [(f, 0.8)], mesh_block(a * b * c, 2 * (a * b + b * c + a * c), a, b, c))
        swapped = dict(rec.mesh, c_over_b=rec.mesh["b_over_a"], b_over_a=rec.mesh["c_over_b"])
        rec2 = summarize_sample("s", [(f, 0.8)], swapped)
        assert envelope_check(rec) == envelope_check(rec2)


def test_comparison_tables_are_permutations():
    for seed in SEEDS:
        rng = _rng("tables", seed)
        n = int(rng.integers(1, 12))
        recs = []
        for i in range(n):
            a, b, c = np.sort(rng.uniform(1, 5, 3))
            views = rng.uniform(1, 2, (int(rng.integers(1, 5)), 1)) * [1, 0.5]
            recs.append(summarize_sample(f"s{i}", views, mesh_block(a * b * c, 2 * (a * b + b * c + a * c), a, b, c)))
        tabs = comparison_tables(recs)
        for rows in tabs.values():
            assert sorted(r["sample_id"] for r in rows) == sorted(r.sample_id for r in recs)


# -- io and cli ------------------------------------------------------------------------


def test_mesh_round_trips(tmp_path):
    for seed in SEEDS:
        rng = _rng("meshio", seed)
        m = _random_hull(rng)
        name = ["m.obj", "m.ply", "a.ply"][seed % 3]
        io.write_mesh(m, tmp_path / name, binary=name != "a.ply")
        back = io.parse_mesh(tmp_path / name)
        assert np.array_equal(back.vertices, m.vertices) and np.array_equal(back.faces, m.faces)


def test_scene_round_trips(tmp_path):
    for seed in SEEDS:
        scene = _small_scene(seed)
        rng = _rng("sceneio", seed)
        scene = scene.with_weights(rng.random(scene.n_observations))
        io.write_scene(scene, tmp_path / "s.json")
        back, _ = io.read_scene(tmp_path / "s.json")
        assert np.array_equal(back.pixels, scene.pixels) and np.array_equal(back.weights, scene.weights)
        assert np.array_equal(back.points, scene.points)
        for c0, c1 in zip(back.cameras, scene.cameras):
            assert np.array_equal(c0.rotation, c1.rotation) and c0.focal == c1.focal


def test_marker_round_trips(tmp_path):
    labels = ["red", "green", "blue", "yellow"]
    for seed in SEEDS:
        rng = _rng("markerio", seed)
        obj = [ObjectMarker(f"m{i}", tuple(rng.normal(size=3)), tuple(rng.normal(size=3) + 5)) for i in range(2)]
        bg = [BackgroundMarker(lab, tuple(rng.normal(size=3))) for lab in labels]
        kd = [KnownDistance("red", "green", float(rng.uniform(1, 50)))]
        io.write_markers(tmp_path / "m.json", obj, bg, kd)
        assert io.read_markers(tmp_path / "m.json") == (obj, bg, kd)


def test_cli_determinism(tmp_path, capsys):
    for seed in SEEDS:
        rng = _rng("cli", seed)
        mesh = tmp_path / "m.ply"
        io.write_mesh(_random_hull(rng), mesh)
        outs = []
        for k in range(2):
            out = tmp_path / f"o{k}.json"
            assert main(["analyze-mesh", str(mesh), "--units", ["cm", "mm", "in"][seed % 3], "-o", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        json.loads(outs[0])
    capsys.readouterr()
