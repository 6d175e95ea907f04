"""2D silhouettes of a particle and their morphology.

Silhouettes come either from rendering a mesh through a synthetic
:class:`ViewCamera` or from externally segmented binary masks.  The outer
boundary is traced with marching squares, and Feret diameters, area,
perimeter, 2D FER and circularity are computed from that polygon.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from . import _backend
from .errors import (
    DegeneratePolygon,
    EmptyMesh,
    InvalidConfig,
    NoForeground,
    NonPositiveInput,
    OrderViolation,
    OutOfFrame,
    SelfIntersecting,
)

DEFAULT_RESOLUTION = 1024
_ORDER_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class RasterMask:
    """Binary foreground grid; ``pixels[row, col]`` is True on the particle."""

    pixels: np.ndarray
    pixel_pitch: float | None = None  # cm per pixel, when known

    def __post_init__(self):
        px = np.array(self.pixels, dtype=bool)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidConfig(f"mask must be a non-empty 2D grid, got shape {px.shape}")
        if self.pixel_pitch is not None and not self.pixel_pitch > 0:
            raise InvalidConfig("pixel_pitch must be positive")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def foreground_count(self):
        return int(self.pixels.sum())


def _shoelace(xy):
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True, eq=False)
class SilhouettePolygon:
    """Closed boundary loop, stored counter-clockwise (positive signed area).

    Clockwise input is reversed on construction.  Simplicity is checked by
    :func:`polygon_metrics`.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 2)
        if len(v) < 3:
            raise DegeneratePolygon("polygon needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise DegeneratePolygon("polygon vertices must be finite")
        a = _shoelace(v)
        if a == 0.0:
            raise DegeneratePolygon("polygon has zero area")
        if a < 0:
            v = v[::-1].copy()
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def scaled(self, factor):
        return SilhouettePolygon(self.vertices * float(factor))


@dataclass(frozen=True)
class ViewCamera:
    """Synthetic camera used to render silhouettes.

    ``direction`` points from the camera towards the scene.  Orthographic
    views map ``pixel_pitch`` world units to one pixel around ``center``;
    pinhole views sit ``distance`` behind ``center`` with intrinsics
    ``focal`` and ``principal`` (pixels).
    """

    direction: tuple
    width: int = DEFAULT_RESOLUTION
    height: int = DEFAULT_RESOLUTION
    mode: str = "orthographic"
    pixel_pitch: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 0.0, 1.0)
    focal: float = 1000.0
    principal: tuple | None = None
    distance: float = 10.0
    _frame: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        norm = np.linalg.norm(d)
        if not norm > 0:
            raise InvalidConfig("view direction must be non-zero")
        d = d / norm
        if self.mode not in ("orthographic", "pinhole"):
            raise InvalidConfig(f"unknown camera mode {self.mode!r}")
        if self.width < 16 or self.height < 16:
            raise InvalidConfig("resolution must be at least 16x16")
        if self.mode == "orthographic" and not self.pixel_pitch > 0:
            raise InvalidConfig("pixel_pitch must be positive")
        if self.mode == "pinhole" and not (self.focal > 0 and self.distance > 0):
            raise InvalidConfig("focal and distance must be positive")
        up = np.asarray(self.up, dtype=float)
        right = np.cross(d, up)
        if np.linalg.norm(right) < 1e-9:
            up = np.eye(3)[np.argmin(np.abs(d))]
            right = np.cross(d, up)
        right /= np.linalg.norm(right)
        down = np.cross(d, right)
        object.__setattr__(self, "direction", tuple(d))
        object.__setattr__(self, "_frame", np.stack([right, down, d]))

    def project(self, points):
        """Pixel coordinates (x = column, y = row) of world points."""
        p = np.asarray(points, dtype=float) - np.asarray(self.center, dtype=float)
        right, down, fwd = self._frame
        if self.mode == "orthographic":
            cx, cy = (self.width - 1) / 2, (self.height - 1) / 2
            return np.stack([p @ right / self.pixel_pitch + cx, p @ down / self.pixel_pitch + cy], axis=1)
        cx, cy = self.principal if self.principal is not None else ((self.width - 1) / 2, (self.height - 1) / 2)
        pc = p + self.distance * fwd
        depth = pc @ fwd
        if np.any(depth <= 1e-12):
            raise OutOfFrame("part of the mesh lies behind the pinhole camera")
        return np.stack([self.focal * (pc @ right) / depth + cx, self.focal * (pc @ down) / depth + cy], axis=1)


def turntable_directions(n_views, elevation_deg):
    """Viewing directions of cameras equispaced in azimuth at a fixed elevation."""
    if n_views < 1:
        raise InvalidConfig("need at least one view")
    az = 2 * np.pi * np.arange(n_views) / n_views
    el = np.deg2rad(elevation_deg)
    pos = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.full(n_views, np.sin(el))], axis=1)
    return -pos


def framed_camera(mesh, direction, resolution=DEFAULT_RESOLUTION, margin=0.05):
    """Orthographic camera that keeps the whole mesh in frame from any direction."""
    v = np.asarray(mesh.vertices)
    if len(v) == 0:
        raise EmptyMesh("mesh has no vertices")
    center = (v.max(axis=0) + v.min(axis=0)) / 2
    radius = float(np.linalg.norm(v - center, axis=1).max())
    if radius == 0.0:
        raise EmptyMesh("mesh has zero extent")
    pitch = 2 * radius * (1 + margin) / (resolution - 1)
    return ViewCamera(direction=tuple(direction), width=resolution, height=resolution,
                      pixel_pitch=pitch, center=tuple(center))


def render_silhouette(mesh, camera):
    """Binary silhouette: a pixel is set iff its centre is covered by a projected face."""
    if mesh.n_faces == 0:
        raise EmptyMesh("mesh has no faces")
    uv = camera.project(mesh.vertices)
    lo, hi = uv[np.unique(mesh.faces)].min(axis=0), uv[np.unique(mesh.faces)].max(axis=0)
    if lo[0] < -0.5 or lo[1] < -0.5 or hi[0] > camera.width - 0.5 or hi[1] > camera.height - 0.5:
        raise OutOfFrame(f"projection spans x [{lo[0]:.1f}, {hi[0]:.1f}], y [{lo[1]:.1f}, {hi[1]:.1f}] "
                         f"outside a {camera.width}x{camera.height} image")
    grid = _backend.rasterize_triangles(uv[mesh.faces], camera.width, camera.height)
    pitch = camera.pixel_pitch if camera.mode == "orthographic" else None
    return RasterMask(grid.astype(bool), pixel_pitch=pitch)


def _largest_component(pixels):
    labels, n = ndimage.label(pixels)  # default structure: 4-connectivity
    if n == 1:
        comp = labels == 1
    else:
        sizes = np.bincount(labels.ravel())[1:]
        comp = labels == (int(np.argmax(sizes)) + 1)
    # background connectivity is 8, dual to the foreground's 4
    return ndimage.binary_fill_holes(comp, structure=np.ones((3, 3), dtype=bool))


def _assemble_loops(segs):
    width = int(segs[:, [1, 3]].max()) + 2
    start = segs[:, 0] * width + segs[:, 1]
    end = segs[:, 2] * width + segs[:, 3]
    nxt = {int(k): i for i, k in enumerate(start)}
    used = np.zeros(len(segs), dtype=bool)
    loops = []
    for s0 in range(len(segs)):
        if used[s0]:
            continue
        idx = []
        s = s0
        while not used[s]:
            used[s] = True
            idx.append(s)
            s = nxt[int(end[s])]
        loops.append(segs[idx, :2])
    return loops


def trace_boundary(mask):
    """Outer contour of the largest 4-connected foreground component.

    Marching squares at iso-level 0.5 on pixel centres; vertices are in
    pixel units with x = column and y = row.  Holes are discarded.
    """
    if not mask.pixels.any():
        raise NoForeground("mask has no foreground pixels")
    comp = _largest_component(mask.pixels)
    padded = np.pad(comp, 1).astype(np.uint8)
    segs = _backend.marching_squares_segments(padded)
    loops = _assemble_loops(segs)
    best = max(loops, key=lambda lp: abs(_shoelace(lp[:, ::-1].astype(float))))
    xy = best[:, ::-1].astype(np.float64) / 2.0 - 1.0
    if _shoelace(xy) < 0:
        xy = xy[::-1]
    k = int(np.lexsort((xy[:, 0], xy[:, 1]))[0])
    return SilhouettePolygon(np.roll(xy, -k, axis=0))


def polygon_metrics(poly):
    """Area (shoelace) and perimeter of a simple polygon."""
    v = poly.vertices
    i, j = _backend.polygon_self_intersection(v)
    if i >= 0:
        raise SelfIntersecting(f"edges {i} and {j} intersect")
    area = _shoelace(v)
    perimeter = float(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1).sum())
    return area, perimeter


def _hull_vertices(v):
    try:
        return v[ConvexHull(v).vertices]
    except QhullError:
        raise DegeneratePolygon("polygon vertices are collinear") from None


def max_feret(poly):
    """Longest caliper diameter and the angle in [0, pi) of the attaining chord.

    Ties are broken towards the smallest angle.
    """
    h = _hull_vertices(poly.vertices)
    d = h[:, None, :] - h[None, :, :]
    d2 = (d ** 2).sum(axis=2)
    best = d2.max()
    if best <= 0:
        raise DegeneratePolygon("polygon has zero diameter")
    ii, jj = np.nonzero(np.triu(d2 == best, 1))
    chords = h[jj] - h[ii]
    angles = np.mod(np.arctan2(chords[:, 1], chords[:, 0]), np.pi)
    angles[angles >= np.pi] = 0.0
    return float(np.sqrt(best)), float(angles.min())


def min_feret_perp(poly, direction):
    """Caliper width of the polygon perpendicular to ``direction`` (radians)."""
    n = np.array([-np.sin(direction), np.cos(direction)])
    proj = poly.vertices @ n
    width = float(proj.max() - proj.min())
    if width <= 0:
        raise DegeneratePolygon("polygon has zero width perpendicular to the given direction")
    return width


def fer_2d(l_max, l_min):
    """Flat and elongated ratio of a silhouette, L_max / L_min."""
    if not (l_max > 0 and l_min > 0):
        raise NonPositiveInput(f"Feret diameters must be positive (got {l_max}, {l_min})")
    if l_max < l_min * (1 - _ORDER_TOL):
        raise OrderViolation(f"L_max {l_max} is smaller than L_min {l_min}")
    return max(l_max / l_min, 1.0)


def circularity_2d(area, perimeter):
    """4 pi A / P^2."""
    if not (area > 0 and perimeter > 0):
        raise NonPositiveInput(f"area and perimeter must be positive (got {area}, {perimeter})")
    return 4.0 * np.pi * area / (perimeter * perimeter)


def silhouette_metrics(poly, scale=1.0):
    """All 2D indicators of one silhouette; lengths multiplied by ``scale``.

    FER and circularity are computed in the polygon's own units, so they do
    not depend on ``scale``.
    """
    area, perimeter = polygon_metrics(poly)
    l_max, angle = max_feret(poly)
    l_min = min_feret_perp(poly, angle)
    return {
        "area": area * scale * scale,
        "perimeter": perimeter * scale,
        "l_max": l_max * scale,
        "l_min": l_min * scale,
        "feret_angle": angle,
        "fer_2d": fer_2d(l_max, l_min),
        "circularity": circularity_2d(area, perimeter),
    }


def mask_metrics(mask):
    """Trace a mask and compute its 2D indicators in cm when the pitch is known."""
    poly = trace_boundary(mask)
    return silhouette_metrics(poly, mask.pixel_pitch if mask.pixel_pitch else 1.0)


def turntable_silhouettes(mesh, n_views=12, elevation_deg=35.0, resolution=DEFAULT_RESOLUTION):
    """Per-view 2D indicators of a mesh seen from a turntable camera ring."""
    rows = []
    for k, d in enumerate(turntable_directions(n_views, elevation_deg)):
        cam = framed_camera(mesh, d, resolution)
        row = {"view": k}
        row.update(mask_metrics(render_silhouette(mesh, cam)))
        rows.append(row)
    return rows
