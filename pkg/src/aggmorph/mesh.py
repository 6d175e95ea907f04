"""3D particle geometry: mesh validation, volume, area, hull, bounding box, ratios.

All lengths are in centimetres; conversion happens only at the CLI boundary.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import _backend
from .errors import (
    DegenerateInput,
    InconsistentOrientation,
    InsufficientPoints,
    InvalidMesh,
    NonPositiveInput,
    NonWatertight,
    ZeroExtent,
)

ZERO_AREA_TOL = 1e-12
DEGENERATE_REL_TOL = 1e-9


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangle surface with ``vertices`` (n, 3) and ``faces`` (m, 3) index triples.

    Construction checks shapes and index ranges only; closedness and
    orientation are checked by :func:`validate_mesh`.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64).reshape(-1, 3) if np.size(self.vertices) else np.zeros((0, 3))
        f = _frozen(self.faces, np.int64).reshape(-1, 3) if np.size(self.faces) else np.zeros((0, 3), np.int64)
        if not np.all(np.isfinite(v)):
            raise InvalidMesh("vertex coordinates must be finite")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            bad = int(np.nonzero((f < 0) | (f >= len(v)))[0][0])
            raise InvalidMesh(f"face {bad} references a vertex outside 0..{len(v) - 1}")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def transformed(self, rotation=None, translation=None, scale=1.0):
        """Return ``scale * R @ v + t`` applied to every vertex."""
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=float).T
        v = scale * v
        if translation is not None:
            v = v + np.asarray(translation, dtype=float)
        return TriangleMesh(v, self.faces)


@dataclass(frozen=True)
class OrientedBox:
    center: np.ndarray
    axes: np.ndarray  # rows are unit axes matching ``extents``
    extents: np.ndarray  # ascending: a <= b <= c

    @property
    def volume(self):
        return float(np.prod(self.extents))

    @property
    def dims(self):
        a, b, c = (float(x) for x in self.extents)
        return a, b, c

    def corners(self):
        signs = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], dtype=float)
        return self.center + (signs * (self.extents / 2)) @ self.axes


def _directed_edges(faces):
    return faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)


def check_watertight(mesh):
    """Raise :class:`NonWatertight` unless every undirected edge borders exactly two faces."""
    if mesh.n_faces == 0:
        raise InvalidMesh("mesh has no faces")
    und = np.sort(_directed_edges(mesh.faces), axis=1)
    uniq, counts = np.unique(und, axis=0, return_counts=True)
    bad = np.nonzero(counts != 2)[0]
    if len(bad):
        raise NonWatertight(uniq[bad[0]], counts[bad[0]])


def check_orientation(mesh):
    """Raise :class:`InconsistentOrientation` if two faces traverse an edge the same way."""
    uniq, counts = np.unique(_directed_edges(mesh.faces), axis=0, return_counts=True)
    bad = np.nonzero(counts > 1)[0]
    if len(bad):
        raise InconsistentOrientation(uniq[bad[0]])


def face_areas(mesh):
    v = mesh.vertices
    f = mesh.faces
    cr = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return 0.5 * np.linalg.norm(cr, axis=1)


def validate_mesh(mesh):
    """Check every TriangleMesh invariant, raising the matching error on failure."""
    check_watertight(mesh)
    check_orientation(mesh)
    areas = face_areas(mesh)
    small = np.nonzero(areas <= ZERO_AREA_TOL)[0]
    if len(small):
        raise InvalidMesh(f"face {int(small[0])} has zero area ({areas[small[0]]:.3g} cm^2)")


def _raw_volume(vertices, faces):
    v = vertices - vertices.mean(axis=0)
    a, b, c = v[faces[:, 0]], v[faces[:, 1]], v[faces[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def repair_orientation(mesh):
    """Flip faces so every shared edge is traversed in opposite directions.

    Each connected patch is flood-filled from its first face; a patch whose
    enclosed volume comes out negative is flipped as a whole so normals point
    outward.  Non-orientable input raises :class:`InconsistentOrientation`.
    """
    check_watertight(mesh)
    faces = mesh.faces.copy()
    m = len(faces)
    edges = _directed_edges(faces)
    und = np.sort(edges, axis=1)
    _, inv = np.unique(und, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    owner = np.repeat(np.arange(m), 3)
    order = np.argsort(inv, kind="stable")
    pairs = order.reshape(-1, 2)  # watertight: exactly two half-edges per edge
    neighbours = [[] for _ in range(m)]
    for h0, h1 in pairs:
        f0, f1 = owner[h0], owner[h1]
        same_dir = edges[h0, 0] == edges[h1, 0]
        neighbours[f0].append((f1, same_dir, edges[h0]))
        neighbours[f1].append((f0, same_dir, edges[h1]))

    flip = np.zeros(m, dtype=bool)
    seen = np.zeros(m, dtype=bool)
    components = []
    for seed in range(m):
        if seen[seed]:
            continue
        seen[seed] = True
        comp = [seed]
        queue = deque([seed])
        while queue:
            f = queue.popleft()
            for g, same_dir, edge in neighbours[f]:
                want = flip[f] ^ bool(same_dir)
                if not seen[g]:
                    seen[g] = True
                    flip[g] = want
                    comp.append(g)
                    queue.append(g)
                elif flip[g] != want:
                    raise InconsistentOrientation(edge)
        components.append(np.array(comp))
    faces[flip] = faces[flip][:, ::-1]
    for comp in components:
        if _raw_volume(mesh.vertices, faces[comp]) < 0:
            faces[comp] = faces[comp][:, ::-1]
    return TriangleMesh(mesh.vertices, faces)


def signed_volume(mesh):
    """Enclosed volume (cm^3) from signed tetrahedra; positive for outward faces."""
    validate_mesh(mesh)
    return _raw_volume(mesh.vertices, mesh.faces)


def surface_area(mesh):
    """Total triangle area (cm^2)."""
    validate_mesh(mesh)
    return float(face_areas(mesh).sum())


def _diameter_scale(pts):
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def _check_spread(pts):
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
        raise DegenerateInput("need at least 4 points in 3D")
    if not np.all(np.isfinite(pts)):
        raise DegenerateInput("points must be finite")
    scale = _diameter_scale(pts)
    if scale == 0.0:
        raise DegenerateInput("all points coincide")
    centred = pts - pts.mean(axis=0)
    normal = np.linalg.svd(centred, full_matrices=False)[2][-1]
    if np.abs(centred @ normal).max() <= DEGENERATE_REL_TOL * scale:
        raise DegenerateInput("points are coplanar or collinear")
    return scale


def convex_hull(points):
    """Convex hull of a 3D point set as an outward-oriented :class:`TriangleMesh`."""
    pts = np.asarray(points, dtype=np.float64)
    _check_spread(pts)
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateInput(f"qhull failed: {exc}") from None
    simplices = hull.simplices.copy()
    v = pts
    normals = np.cross(v[simplices[:, 1]] - v[simplices[:, 0]], v[simplices[:, 2]] - v[simplices[:, 0]])
    flip = np.einsum("ij,ij->i", normals, hull.equations[:, :3]) < 0
    simplices[flip] = simplices[flip][:, ::-1]
    keep = np.unique(simplices)
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    return TriangleMesh(pts[keep], remap[simplices])


def _perp_bases(normals):
    """Two unit vectors spanning the plane perpendicular to each normal."""
    helper = np.eye(3)[np.argmin(np.abs(normals), axis=1)]
    u = np.cross(normals, helper)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u, np.cross(normals, u)


def _euler_grid(half_width_deg, step_deg):
    ang = np.deg2rad(np.arange(-half_width_deg, half_width_deg + 0.5 * step_deg, step_deg))
    a, b, c = np.meshgrid(ang, ang, ang, indexing="ij")
    a, b, c = a.ravel(), b.ravel(), c.ravel()
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    # R = Rz(c) @ Ry(b) @ Rx(a)
    r = np.empty((len(a), 3, 3))
    r[:, 0, 0] = cc * cb
    r[:, 0, 1] = cc * sb * sa - sc * ca
    r[:, 0, 2] = cc * sb * ca + sc * sa
    r[:, 1, 0] = sc * cb
    r[:, 1, 1] = sc * sb * sa + cc * ca
    r[:, 1, 2] = sc * sb * ca - cc * sa
    r[:, 2, 0] = -sb
    r[:, 2, 1] = cb * sa
    r[:, 2, 2] = cb * ca
    return r


def _local_descent(hv, frame, vol, half_width, step, max_rounds=20):
    """Re-centre an Euler-angle grid on the current best frame until it stops improving."""
    grid = _euler_grid(half_width, step)
    for _ in range(max_rounds):
        cand = grid @ frame  # perturb in the box frame so the search is rotation-equivariant
        vols = _backend.box_volumes(hv, cand)
        k = int(np.argmin(vols))
        if not vols[k] < vol:
            break
        frame, vol = cand[k], vols[k]
    return frame, vol


def min_volume_obb(points, refine_half_width=5.0, refine_step=0.25, n_starts=8):
    """Approximate minimum-volume oriented bounding box of a 3D point set.

    Candidate frames come from every distinct hull face normal paired with
    every edge direction of the projected 2D hull (the minimum-area
    rectangle of a convex polygon is flush with one of its edges).  The
    ``n_starts`` smallest candidates are each refined by local descent over
    an Euler-angle grid of ``+-refine_half_width`` degrees at 1 degree, then
    ``+-1`` degree at ``refine_step``; the smallest result wins.
    """
    pts = np.asarray(points, dtype=np.float64)
    hull = convex_hull(pts)
    hv = hull.vertices
    origin = hv.mean(axis=0)
    hv = hv - origin

    f = hull.faces
    normals = np.cross(hv[f[:, 1]] - hv[f[:, 0]], hv[f[:, 2]] - hv[f[:, 0]])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    canon = np.where((normals[:, :1] < 0) | ((normals[:, :1] == 0) & (normals[:, 1:2] < 0)), -normals, normals)
    _, first = np.unique(np.round(canon, 9), axis=0, return_index=True)
    normals = canon[np.sort(first)]

    us, ws = _perp_bases(normals)
    vols, dirs = _backend.normal_boxes(hv, normals, us, ws)
    if not np.isfinite(vols).any():
        raise DegenerateInput("no candidate box orientation")

    coarse = max(refine_step, 1.0)
    best, best_vol = None, np.inf
    for k in np.argsort(vols, kind="stable")[:max(1, n_starts)]:
        if not np.isfinite(vols[k]):
            break
        n = normals[k]
        d1 = dirs[k] / np.linalg.norm(dirs[k])
        frame = np.stack([d1, np.cross(n, d1), n])
        vol = _backend.box_volumes(hv, frame[None])[0]
        if refine_half_width > 0 and refine_step > 0:
            frame, vol = _local_descent(hv, frame, vol, refine_half_width, coarse)
            frame, vol = _local_descent(hv, frame, vol, coarse, refine_step)
        if vol < best_vol:
            best, best_vol = frame, vol

    # re-orthonormalise and assemble
    q, r = np.linalg.qr(best.T)
    frame = (q * np.sign(np.diag(r))).T
    proj = hv @ frame.T
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    center = origin + ((lo + hi) / 2) @ frame
    extents = hi - lo
    order = np.argsort(extents, kind="stable")
    axes = frame[order]
    if np.linalg.det(axes) < 0:
        axes[2] = -axes[2]
    return OrientedBox(center=center, axes=axes, extents=extents[order])


def fer_3d(box):
    """Longest over shortest principal dimension, c / a."""
    a, _, c = box.dims
    if a <= 0.0:
        raise ZeroExtent("shortest box dimension is zero")
    return c / a


def sphericity_3d(volume, area):
    """Equivalent-sphere surface area over actual surface area."""
    if not (volume > 0 and area > 0):
        raise NonPositiveInput(f"volume and area must be positive (got {volume}, {area})")
    return float(np.cbrt(36.0 * np.pi * volume * volume) / area)


def caliper_diameter(points):
    """Largest pairwise distance in a point set."""
    pts = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    if len(pts) < 2:
        raise InsufficientPoints("need at least 2 points")
    cand = pts
    if len(pts) > 16 and pts.shape[1] == 3:
        try:
            cand = pts[ConvexHull(pts).vertices]
        except QhullError:
            cand = pts
    d2, _, _ = _backend.max_pairwise_sq(cand)
    return float(np.sqrt(d2))


def mesh_metrics(mesh):
    """Volume, area, principal dimensions and the two 3D ratios of a mesh."""
    volume = signed_volume(mesh)
    area = surface_area(mesh)
    box = min_volume_obb(mesh.vertices)
    a, b, c = box.dims
    return {
        "volume": volume,
        "area": area,
        "a": a,
        "b": b,
        "c": c,
        "fer_3d": fer_3d(box),
        "sphericity": sphericity_3d(volume, area),
        "c_over_b": c / b,
        "b_over_a": b / a,
    }
