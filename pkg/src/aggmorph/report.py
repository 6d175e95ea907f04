"""Volume validation statistics, multi-view summaries and 2D/3D comparison tables."""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyInput,
    EmptyViews,
    InsufficientSamples,
    InvalidConfig,
    NonPositiveMeasurement,
    ZeroMean,
)

# Ten example particles: id, measured volume (cm^3), reconstructed volume (cm^3),
# surface area (cm^2), shortest, intermediate and longest dimension (cm).
REFERENCE_PARTICLES = (
    ("1", 1014.9, 1042.3, 685.32, 7.682, 13.142, 22.695),
    ("2", 763.5, 786.33, 537.87, 9.308, 12.519, 17.412),
    ("3", 601.8, 605.04, 418.69, 9.477, 10.075, 14.572),
    ("4", 791.4, 795.69, 558.41, 9.118, 10.133, 19.925),
    ("5", 727.6, 744.83, 503.13, 9.803, 10.649, 18.842),
    ("6", 688.1, 691.96, 478.72, 7.497, 9.987, 15.925),
    ("7", 644.0, 662.47, 465.96, 11.614, 13.867, 14.041),
    ("8", 1140.5, 1165.03, 704.29, 10.617, 12.213, 21.923),
    ("9", 592.7, 601.1, 435.01, 8.068, 11.517, 17.851),
    ("10", 890.8, 920.92, 590.14, 10.374, 14.513, 17.37),
)

INDICATORS_2D = ("fer_2d", "circularity")


@dataclass(frozen=True)
class VolumePair:
    sample_id: str
    measured: float  # cm^3, ground truth
    reconstructed: float  # cm^3


def reference_pairs():
    return [VolumePair(r[0], r[1], r[2]) for r in REFERENCE_PARTICLES]


def _relative_errors(pairs):
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("no volume pairs")
    m = np.array([p.measured for p in pairs], dtype=float)
    r = np.array([p.reconstructed for p in pairs], dtype=float)
    bad = np.nonzero(~(m > 0))[0]
    if len(bad):
        raise NonPositiveMeasurement(f"sample {pairs[bad[0]].sample_id!r} has measured volume {m[bad[0]]}")
    return (r - m) / m


def mpe(pairs):
    """Mean signed percentage error of reconstructed against measured volumes."""
    return float(np.mean(_relative_errors(pairs)) * 100.0)


def mape(pairs):
    """Mean absolute percentage error."""
    return float(np.mean(np.abs(_relative_errors(pairs))) * 100.0)


def cov(samples):
    """Coefficient of variation with the n - 1 standard deviation."""
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < 2:
        raise InsufficientSamples(f"need >= 2 values, got {len(x)}")
    mu = x.mean()
    if mu == 0:
        raise ZeroMean("mean is zero")
    return float(x.std(ddof=1) / mu)


@dataclass(frozen=True)
class Aggregate:
    mean: float
    min: float
    max: float
    std: float = None  # None for a single view
    cov: float = None

    @classmethod
    def of(cls, values):
        x = np.asarray(values, dtype=float)
        lo, hi = float(x.min()), float(x.max())
        mu = float(np.clip(x.mean(), lo, hi))
        if len(x) < 2:
            return cls(mu, lo, hi)
        return cls(mu, lo, hi, float(x.std(ddof=1)), cov(x))

    def as_dict(self):
        return {"mean": self.mean, "min": self.min, "max": self.max, "std": self.std, "cov": self.cov}


MESH_KEYS = ("volume", "area", "a", "b", "c", "fer_3d", "sphericity", "c_over_b", "b_over_a")


def mesh_block(volume, area, a, b, c):
    """3D block from volume, area and the three box dimensions (any order)."""
    a, b, c = sorted((float(a), float(b), float(c)))
    if not a > 0 or not volume > 0 or not area > 0:
        raise InvalidConfig("dimensions, volume and area must be positive")
    return {
        "volume": float(volume),
        "area": float(area),
        "a": a,
        "b": b,
        "c": c,
        "fer_3d": c / a,
        "sphericity": float((36.0 * np.pi * volume * volume) ** (1.0 / 3.0) / area),
        "c_over_b": c / b,
        "b_over_a": b / a,
    }


def reference_records():
    """Mesh-only records for the ten example particles (no 2D views)."""
    return [(r[0], mesh_block(r[2], r[3], r[4], r[5], r[6])) for r in REFERENCE_PARTICLES]


@dataclass(frozen=True, eq=False)
class MorphologyRecord:
    sample_id: str
    mesh: dict
    views: np.ndarray  # (n_views, 2): fer_2d, circularity
    aggregates: dict = field(default_factory=dict)

    @property
    def fer_2d(self):
        return self.aggregates["fer_2d"]

    @property
    def circularity(self):
        return self.aggregates["circularity"]

    def as_dict(self):
        return {
            "sample_id": self.sample_id,
            "mesh": {k: self.mesh[k] for k in MESH_KEYS if k in self.mesh},
            "views": [{"fer_2d": float(f), "circularity": float(c)} for f, c in self.views],
            "aggregates": {k: v.as_dict() for k, v in self.aggregates.items()},
        }

    @classmethod
    def from_dict(cls, d):
        views = [(v["fer_2d"], v["circularity"]) for v in d["views"]]
        return summarize_sample(d["sample_id"], views, d["mesh"])


def summarize_sample(sample_id, view_stats, mesh_stats):
    """Aggregate per-view ``(fer_2d, circularity)`` pairs next to the 3D block.

    ``view_stats`` may also be a sequence of dicts with those two keys.
    """
    rows = []
    for v in view_stats:
        if isinstance(v, dict):
            rows.append((v["fer_2d"], v["circularity"]))
        else:
            rows.append(tuple(v)[:2])
    if not rows:
        raise EmptyViews(f"sample {sample_id!r} has no views")
    views = np.array(rows, dtype=float).reshape(-1, 2)
    views.setflags(write=False)
    aggs = {name: Aggregate.of(views[:, k]) for k, name in enumerate(INDICATORS_2D)}
    return MorphologyRecord(str(sample_id), dict(mesh_stats), views, aggs)


@dataclass(frozen=True)
class EnvelopeResult:
    inside: bool
    lower: float  # lower bound min(c/b, b/a)
    upper: float
    margin_lower: float  # mean 2D FER - lower, >= 0 inside
    margin_upper: float  # mean 2D FER - upper, <= 0 inside


def envelope_check(record):
    """Is the mean 2D FER between the c/b and b/a ratios of the 3D box?"""
    cb, ba = record.mesh["c_over_b"], record.mesh["b_over_a"]
    lo, hi = min(cb, ba), max(cb, ba)
    f = record.fer_2d.mean
    return EnvelopeResult(bool(lo <= f <= hi), lo, hi, f - lo, f - hi)


FER_COLUMNS = ("sample_id", "fer_3d", "fer_2d_mean", "fer_2d_min", "fer_2d_max", "fer_2d_std", "fer_2d_cov")
ROUNDNESS_COLUMNS = ("sample_id", "sphericity", "circularity_mean", "circularity_min", "circularity_max",
                     "circularity_std", "circularity_cov")
ENVELOPE_COLUMNS = ("sample_id", "fer_2d_mean", "c_over_a", "c_over_b", "b_over_a", "inside",
                    "margin_lower", "margin_upper")


def comparison_tables(records):
    """FER, roundness and envelope tables as lists of row dicts.

    FER rows are sorted by 3D FER, roundness rows by sphericity and envelope
    rows by c/a; ties keep input order.
    """
    records = list(records)
    if not records:
        raise EmptyInput("no records")

    def ind_cols(agg, name):
        return {f"{name}_mean": agg.mean, f"{name}_min": agg.min, f"{name}_max": agg.max,
                f"{name}_std": agg.std, f"{name}_cov": agg.cov}

    fer = [dict(sample_id=r.sample_id, fer_3d=r.mesh["fer_3d"], **ind_cols(r.fer_2d, "fer_2d")) for r in records]
    rnd = [dict(sample_id=r.sample_id, sphericity=r.mesh["sphericity"], **ind_cols(r.circularity, "circularity"))
           for r in records]
    env = []
    for r in records:
        e = envelope_check(r)
        env.append(dict(sample_id=r.sample_id, fer_2d_mean=r.fer_2d.mean, c_over_a=r.mesh["fer_3d"],
                        c_over_b=r.mesh["c_over_b"], b_over_a=r.mesh["b_over_a"], inside=e.inside,
                        margin_lower=e.margin_lower, margin_upper=e.margin_upper))
    return {
        "fer": sorted(fer, key=lambda row: row["fer_3d"]),
        "roundness": sorted(rnd, key=lambda row: row["sphericity"]),
        "envelope": sorted(env, key=lambda row: row["c_over_a"]),
    }
