import numpy as np
import pytest

from aggmorph.errors import (
    EmptyInput,
    EmptyViews,
    InsufficientSamples,
    InvalidConfig,
    NonPositiveMeasurement,
    ZeroMean,
)
from aggmorph.mesh import mesh_metrics
from aggmorph.report import (
    ENVELOPE_COLUMNS,
    FER_COLUMNS,
    ROUNDNESS_COLUMNS,
    Aggregate,
    MorphologyRecord,
    VolumePair,
    comparison_tables,
    cov,
    envelope_check,
    mape,
    mesh_block,
    mpe,
    reference_pairs,
    reference_records,
    summarize_sample,
)
from aggmorph.shapes import ellipsoid, icosphere
from aggmorph.silhouette import turntable_silhouettes


def test_mpe_examples():
    assert mpe([VolumePair("a", 100.0, 102.0)]) == pytest.approx(2.0)
    pairs = [VolumePair("a", 100.0, 102.0), VolumePair("b", 100.0, 98.0)]
    assert mpe(pairs) == pytest.approx(0.0, abs=1e-12)
    assert mape(pairs) == pytest.approx(2.0)


def test_reference_mpe():
    pairs = reference_pairs()
    assert len(pairs) == 10
    assert mpe(pairs) == pytest.approx(1.95, abs=0.005)
    # every reconstruction overestimates, so signed and absolute errors agree
    assert mape(pairs) == mpe(pairs)
    assert all(p.reconstructed > p.measured for p in pairs)


def test_mpe_errors():
    with pytest.raises(EmptyInput):
        mpe([])
    with pytest.raises(NonPositiveMeasurement):
        mpe([VolumePair("z", 0.0, 1.0)])
    with pytest.raises(NonPositiveMeasurement):
        mape([VolumePair("a", 1.0, 1.0), VolumePair("n", -2.0, 1.0)])


def test_cov_examples():
    assert cov([2.0, 2.0, 2.0]) == 0.0
    assert cov([1.0, 3.0]) == pytest.approx(np.sqrt(2) / 2)
    assert cov([1.0, 2.0, 3.0, 4.0]) == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.5)
    with pytest.raises(InsufficientSamples):
        cov([1.0])
    with pytest.raises(ZeroMean):
        cov([-1.0, 1.0])


def test_aggregate_single_and_many():
    a = Aggregate.of([1.3])
    assert (a.mean, a.min, a.max, a.std, a.cov) == (1.3, 1.3, 1.3, None, None)
    b = Aggregate.of([1.0, 2.0, 3.0])
    assert b.min <= b.mean <= b.max
    assert b.std == pytest.approx(1.0) and b.cov == pytest.approx(0.5)


def test_aggregate_mean_clipped_for_constant_input():
    x = [0.1 + 0.2] * 7
    a = Aggregate.of(x)
    assert a.min <= a.mean <= a.max


def test_mesh_block_sorts_and_validates():
    blk = mesh_block(30.0, 62.0, 5, 2, 3)
    assert (blk["a"], blk["b"], blk["c"]) == (2.0, 3.0, 5.0)
    assert blk["fer_3d"] == 2.5 and blk["c_over_b"] == pytest.approx(5 / 3) and blk["b_over_a"] == 1.5
    with pytest.raises(InvalidConfig):
        mesh_block(1.0, 6.0, 0.0, 1.0, 1.0)


def test_reference_records_ranges():
    recs = reference_records()
    assert recs[0][1]["sphericity"] == pytest.approx(0.7254, abs=1e-4)
    assert recs[0][1]["fer_3d"] == pytest.approx(2.954, abs=5e-4)
    fer = [b["fer_3d"] for _, b in recs]
    sph = [b["sphericity"] for _, b in recs]
    assert 1.2 <= min(fer) and max(fer) <= 3.0
    assert 0.72 <= min(sph) and max(sph) <= 0.83


def test_summarize_single_view():
    rec = summarize_sample("x", [(1.4, 0.8)], mesh_block(1, 6, 1, 1, 1))
    assert rec.fer_2d.std is None and rec.fer_2d.cov is None
    assert rec.fer_2d.mean == 1.4 and rec.circularity.mean == 0.8


def test_summarize_accepts_dicts_and_rejects_empty():
    a = summarize_sample("x", [{"fer_2d": 1.2, "circularity": 0.7}, {"fer_2d": 1.4, "circularity": 0.9}],
                         mesh_block(1, 6, 1, 1, 1))
    b = summarize_sample("x", [(1.2, 0.7), (1.4, 0.9)], mesh_block(1, 6, 1, 1, 1))
    assert np.array_equal(a.views, b.views)
    with pytest.raises(EmptyViews):
        summarize_sample("x", [], mesh_block(1, 6, 1, 1, 1))


def test_record_round_trip():
    rec = summarize_sample("r", [(1.2, 0.7), (1.5, 0.8), (1.3, 0.75)], mesh_block(30, 62, 2, 3, 5))
    back = MorphologyRecord.from_dict(rec.as_dict())
    assert back.as_dict() == rec.as_dict()


@pytest.fixture(scope="module")
def sphere_record():
    mesh = icosphere(3)
    return summarize_sample("sphere", turntable_silhouettes(mesh, n_views=12), mesh_metrics(mesh))


def test_sphere_record(sphere_record):
    r = sphere_record
    assert r.fer_2d.mean == pytest.approx(1.0, abs=0.01)
    assert r.fer_2d.cov < 0.01 and r.circularity.cov < 0.01
    # raw traced boundaries lengthen the perimeter of a disk by about 5%,
    # which holds circularity near 0.90 rather than 1
    assert 0.88 <= r.circularity.mean <= 1.0
    assert r.mesh["sphericity"] == pytest.approx(1.0, abs=0.01)


def test_ellipsoid_2d_fer_below_3d():
    mesh = ellipsoid((3, 4, 6), subdivisions=3)
    rec = summarize_sample("e", turntable_silhouettes(mesh, n_views=12), mesh_metrics(mesh))
    assert rec.fer_2d.mean < rec.mesh["fer_3d"]
    assert rec.fer_2d.min <= rec.fer_2d.mean <= rec.fer_2d.max


def _rec(sample_id, fer2d, dims):
    a, b, c = dims
    return summarize_sample(sample_id, [(fer2d, 0.8)], mesh_block(a * b * c / 2, 2 * (a * b + b * c + a * c), a, b, c))


def test_envelope_inside():
    # c/b = 1.5, b/a = 4/3
    e = envelope_check(_rec("in", 1.4, (3.0, 4.0, 6.0)))
    assert e.inside
    assert e.lower == pytest.approx(4 / 3) and e.upper == pytest.approx(1.5)
    assert e.margin_lower == pytest.approx(0.0667, abs=5e-5)
    assert e.margin_upper == pytest.approx(-0.1)


def test_envelope_outside():
    e = envelope_check(_rec("out", 1.6, (3.0, 4.0, 6.0)))
    assert not e.inside
    assert e.margin_upper == pytest.approx(0.1)


def test_comparison_tables_ordering_and_columns():
    recs = [_rec("a", 1.2, (1, 2, 5)), _rec("b", 1.1, (1, 1, 1.5)), _rec("c", 1.3, (2, 3, 4))]
    tabs = comparison_tables(recs)
    assert [r["sample_id"] for r in tabs["fer"]] == ["b", "c", "a"]
    assert [r["sample_id"] for r in tabs["envelope"]] == ["b", "c", "a"]
    sph = [r["sphericity"] for r in tabs["roundness"]]
    assert sph == sorted(sph)
    assert tuple(tabs["fer"][0]) == FER_COLUMNS
    assert tuple(tabs["roundness"][0]) == ROUNDNESS_COLUMNS
    assert tuple(tabs["envelope"][0]) == ENVELOPE_COLUMNS


def test_comparison_tables_permutation_invariant():
    rng = np.random.default_rng(0)
    recs = [_rec(str(i), rng.uniform(1, 2), tuple(rng.uniform(1, 5, 3))) for i in range(8)]
    base = comparison_tables(recs)
    for _ in range(5):
        assert comparison_tables([recs[i] for i in rng.permutation(8)]) == base


def test_comparison_tables_empty():
    with pytest.raises(EmptyInput):
        comparison_tables([])
