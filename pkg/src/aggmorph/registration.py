"""Marker localisation, similarity estimation, cloud stitching and scale calibration."""

from dataclasses import dataclass

import numpy as np

from .errors import (
    CountMismatch,
    Degenerate,
    IllConditioned,
    InsufficientCorrespondences,
    InsufficientViews,
    InvalidConfig,
    LabelMismatch,
    MissingLabel,
    ZeroLocalDistance,
)

OBJECT_PALETTE = ("purple", "red")
BACKGROUND_PALETTE = ("red", "green", "blue", "yellow")
MIN_PARALLAX_RAD = 1e-3


@dataclass(frozen=True)
class ObjectMarker:
    """Head-tail marker drawn on the particle; ``head``/``tail`` are 3D points."""

    label: str
    head: tuple
    tail: tuple

    def __post_init__(self):
        h = np.asarray(self.head, dtype=float)
        t = np.asarray(self.tail, dtype=float)
        if h.shape != (3,) or t.shape != (3,):
            raise InvalidConfig(f"marker {self.label!r}: head and tail must be 3D points")
        if np.array_equal(h, t):
            raise InvalidConfig(f"marker {self.label!r}: head and tail coincide")
        object.__setattr__(self, "head", tuple(float(x) for x in h))
        object.__setattr__(self, "tail", tuple(float(x) for x in t))


@dataclass(frozen=True)
class BackgroundMarker:
    label: str
    position: tuple

    def __post_init__(self):
        if self.label not in BACKGROUND_PALETTE:
            raise InvalidConfig(f"background marker label {self.label!r} not in {BACKGROUND_PALETTE}")
        p = np.asarray(self.position, dtype=float)
        if p.shape != (3,):
            raise InvalidConfig(f"marker {self.label!r}: position must be a 3D point")
        object.__setattr__(self, "position", tuple(float(x) for x in p))


@dataclass(frozen=True)
class MarkerAnnotation:
    """A hand-labelled pixel of one marker part (head, tail or center) in one view."""

    view_id: str
    marker_label: str
    role: str
    pixel: tuple

    def __post_init__(self):
        if self.role not in ("head", "tail", "center"):
            raise InvalidConfig(f"unknown marker role {self.role!r}")


@dataclass(frozen=True)
class KnownDistance:
    a_label: str
    b_label: str
    cm: float


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """x -> scale * rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not self.scale > 0:
            raise InvalidConfig("scale must be positive")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or np.linalg.det(r) <= 0:
            raise InvalidConfig("rotation must be orthonormal with determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3), 1.0)

    def inverse(self):
        rt = self.rotation.T
        return SimilarityTransform(rt, -(rt @ self.translation) / self.scale, 1.0 / self.scale)

    def compose(self, other):
        """Transform equal to applying ``other`` first, then ``self``."""
        return SimilarityTransform(
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
            self.scale * other.scale,
        )


def apply_similarity(transform, cloud):
    """Apply ``x -> s R x + t`` to every point of an (n, 3) cloud."""
    p = np.asarray(cloud, dtype=float).reshape(-1, 3)
    return transform.scale * p @ transform.rotation.T + transform.translation


def _camera_center(P):
    return np.linalg.svd(P)[2][-1]


def localize_marker(annotations, cameras, min_parallax=MIN_PARALLAX_RAD):
    """Linear (DLT) triangulation of one marker part seen in two or more views.

    ``cameras`` maps each ``view_id`` to its 3x4 projection matrix.  Returns
    ``(point, rms_reprojection_px)``.
    """
    anns = list(annotations)
    keys = {(a.marker_label, a.role) for a in anns}
    if len(keys) > 1:
        raise InvalidConfig(f"annotations mix several marker parts: {sorted(keys)}")
    views = {a.view_id for a in anns}
    if len(views) < 2 or len(views) != len(anns):
        raise InsufficientViews(f"need the same marker part in >= 2 distinct views (got {len(views)})")
    Ps = []
    rows = []
    for a in anns:
        if a.view_id not in cameras:
            raise InvalidConfig(f"no camera for view {a.view_id!r}")
        P = np.asarray(cameras[a.view_id], dtype=float).reshape(3, 4)
        x, y = a.pixel
        for r in (x * P[2] - P[0], y * P[2] - P[1]):
            rows.append(r / np.linalg.norm(r))
        Ps.append(P)

    # ray directions for the parallax check
    rays = []
    for P, a in zip(Ps, anns):
        M = P[:, :3]
        d = np.linalg.solve(M, np.array([a.pixel[0], a.pixel[1], 1.0]))
        rays.append(d / np.linalg.norm(d))
    rays = np.array(rays)
    cosines = np.clip(np.abs(rays @ rays.T), 0.0, 1.0)
    if np.arccos(cosines.min()) < min_parallax:
        raise IllConditioned("viewing rays are nearly parallel")

    A = np.array(rows)
    _, s, vt = np.linalg.svd(A)
    if s[-2] <= 1e-12 * s[0]:
        raise IllConditioned("triangulation system is rank deficient")
    Xh = vt[-1]
    if abs(Xh[3]) <= 1e-12 * np.abs(Xh[:3]).max():
        raise IllConditioned("triangulated point is at infinity")
    X = Xh[:3] / Xh[3]
    res = []
    for P, a in zip(Ps, anns):
        h = P @ np.append(X, 1.0)
        res.append(h[:2] / h[2] - np.asarray(a.pixel, dtype=float))
    rms = float(np.sqrt(np.mean(np.sum(np.square(res), axis=1))))
    return X, rms


def estimate_similarity(source, target, with_scale=True):
    """Least-squares similarity mapping ``source`` onto ``target`` (closed form).

    Returns ``(transform, rms)``.  The cross-covariance SVD is guarded
    against reflections so the rotation always has determinant +1.
    """
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    dst = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(src) != len(dst):
        raise CountMismatch(f"{len(src)} source points vs {len(dst)} target points")
    if len(src) < 3:
        raise Degenerate("need at least 3 correspondences")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= 1e-9 * sv[0]:
        raise Degenerate("source points are collinear or coincident")
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    scale = float((D * S).sum() / (xs ** 2).sum(axis=1).mean()) if with_scale else 1.0
    t = mu_d - scale * R @ mu_s
    T = SimilarityTransform(R, t, scale)
    rms = float(np.sqrt(np.mean(np.sum((apply_similarity(T, src) - dst) ** 2, axis=1))))
    return T, rms


@dataclass(frozen=True, eq=False)
class StitchResult:
    points: np.ndarray
    transform: SimilarityTransform
    residual_rms: float
    marker_residuals: dict  # (label, role) -> distance after alignment
    n_a: int
    n_b: int


def _marker_points(markers):
    out = {}
    for m in markers:
        if m.label in {k[0] for k in out}:
            raise InvalidConfig(f"duplicate marker label {m.label!r}")
        out[(m.label, "head")] = np.asarray(m.head, dtype=float)
        out[(m.label, "tail")] = np.asarray(m.tail, dtype=float)
    return out


def stitch(cloud_a, cloud_b, markers_a, markers_b):
    """Bring ``cloud_b`` into ``cloud_a``'s frame through shared object markers.

    Markers are paired by label and role only.  The merged cloud is
    ``cloud_a`` followed by the transformed ``cloud_b``.
    """
    pa, pb = _marker_points(markers_a), _marker_points(markers_b)
    shared = sorted(set(pa) & set(pb))
    if not shared:
        raise LabelMismatch(f"no common marker labels between {sorted({k[0] for k in pa})} "
                            f"and {sorted({k[0] for k in pb})}")
    if len(shared) < 3:
        raise InsufficientCorrespondences(f"only {len(shared)} matched marker points; need >= 3")
    src = np.array([pb[k] for k in shared])
    dst = np.array([pa[k] for k in shared])
    for markers, cloud in ((markers_a, cloud_a), (markers_b, cloud_b)):
        c = np.asarray(cloud, dtype=float).reshape(-1, 3)
        diam = np.linalg.norm(c.max(axis=0) - c.min(axis=0)) if len(c) else 0.0
        for m in markers:
            if np.linalg.norm(np.subtract(m.head, m.tail)) <= 1e-9 * diam:
                raise Degenerate(f"marker {m.label!r}: head and tail closer than 1e-9 of the cloud diameter")
    T, rms = estimate_similarity(src, dst)
    moved = apply_similarity(T, src)
    residuals = {k: float(np.linalg.norm(m - d)) for k, m, d in zip(shared, moved, dst)}
    a = np.asarray(cloud_a, dtype=float).reshape(-1, 3)
    b = apply_similarity(T, cloud_b)
    return StitchResult(np.vstack([a, b]), T, rms, residuals, len(a), len(b))


@dataclass(frozen=True)
class ScaleCalibration:
    scale: float  # cm per local unit
    residuals: dict  # (a_label, b_label) -> known_cm - scale * local


def calibrate_scale(markers, known_distances):
    """Least-squares cm-per-unit factor from background markers of known spacing."""
    pos = {}
    for m in markers:
        if m.label in pos:
            raise InvalidConfig(f"duplicate marker label {m.label!r}")
        pos[m.label] = np.asarray(m.position, dtype=float)
    pairs = list(known_distances)
    if not pairs:
        raise MissingLabel("no known distances given")
    local, known = [], []
    for kd in pairs:
        for lab in (kd.a_label, kd.b_label):
            if lab not in pos:
                raise MissingLabel(f"marker {lab!r} is not in the marker set")
        d = float(np.linalg.norm(pos[kd.a_label] - pos[kd.b_label]))
        if d <= 0.0:
            raise ZeroLocalDistance(f"markers {kd.a_label!r} and {kd.b_label!r} coincide")
        local.append(d)
        known.append(float(kd.cm))
    local, known = np.array(local), np.array(known)
    s = float(np.dot(known, local) / np.dot(local, local))
    residuals = {(kd.a_label, kd.b_label): float(k - s * d) for kd, k, d in zip(pairs, known, local)}
    return ScaleCalibration(s, residuals)


def scale_morphology(metrics, s, area_factor=None, volume_factor=None):
    """Convert local-unit 3D metrics to cm; dimensionless ratios are copied unchanged.

    ``area_factor`` and ``volume_factor`` default to ``s**2`` and ``s**3``;
    pass exact constants (e.g. 1e-3 for mm -> cm volumes) to avoid the
    rounding of the powers.
    """
    area_factor = s * s if area_factor is None else area_factor
    volume_factor = s ** 3 if volume_factor is None else volume_factor
    out = dict(metrics)
    for key in ("a", "b", "c", "diameter"):
        if key in out:
            out[key] = metrics[key] * s
    if "area" in out:
        out["area"] = metrics["area"] * area_factor
    if "volume" in out:
        out["volume"] = metrics["volume"] * volume_factor
    return out
