"""Pinhole projection, masked reprojection objectives and bundle adjustment.

The masked objective weighs each observation by ``M_ij`` in [0, 1]; with all
weights equal to one it reduces to the plain total reprojection error.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    AtInfinity,
    DivergenceDetected,
    InvalidConfig,
    InvalidScene,
    ProjectionError,
    SingularSystem,
    UnderConstrained,
)

W_EPS = 1e-12


def _skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _canonical_rotvec(r):
    r = np.asarray(r, dtype=float).reshape(3)
    theta = np.linalg.norm(r)
    if theta <= np.pi:
        return r
    wrapped = np.mod(theta + np.pi, 2 * np.pi) - np.pi
    return r / theta * wrapped


def rodrigues(r):
    """Rotation matrix of an axis-angle vector."""
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r)
    if theta < 1e-12:
        return np.eye(3) + _skew(r)
    k = _skew(r / theta)
    return np.eye(3) + np.sin(theta) * k + (1 - np.cos(theta)) * (k @ k)


def rotvec_from_matrix(R):
    from scipy.spatial.transform import Rotation

    return _canonical_rotvec(Rotation.from_matrix(R).as_rotvec())


def rotate_jacobian(r, p, R=None):
    """d(R(r) p) / dr for the axis-angle parametrisation (3x3)."""
    r = np.asarray(r, dtype=float)
    R = rodrigues(r) if R is None else R
    theta2 = float(r @ r)
    if theta2 < 1e-24:
        return -_skew(p)
    return -R @ _skew(p) @ (np.outer(r, r) + (R.T - np.eye(3)) @ _skew(r)) / theta2


@dataclass(frozen=True, eq=False)
class CameraParams:
    focal: float
    principal: tuple
    rotation: np.ndarray  # axis-angle, |r| <= pi
    translation: np.ndarray

    def __post_init__(self):
        if not self.focal > 0:
            raise InvalidConfig("focal length must be positive")
        r = _canonical_rotvec(self.rotation)
        t = np.array(self.translation, dtype=float).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "focal", float(self.focal))
        object.__setattr__(self, "principal", tuple(float(c) for c in self.principal))
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def K(self):
        cx, cy = self.principal
        return np.array([[self.focal, 0.0, cx], [0.0, self.focal, cy], [0.0, 0.0, 1.0]])

    @property
    def R(self):
        return rodrigues(self.rotation)

    @property
    def center(self):
        return -self.R.T @ self.translation


def projection_matrix(camera):
    """3x4 matrix K [R | t]."""
    return camera.K @ np.hstack([camera.R, camera.translation[:, None]])


def project(P, X):
    """Dehomogenised pixel of a 3D point under a 3x4 projection matrix."""
    h = np.asarray(P, dtype=float) @ np.append(np.asarray(X, dtype=float), 1.0)
    if abs(h[2]) <= W_EPS:
        raise AtInfinity(f"point {tuple(X)} lies on the principal plane (w = {h[2]:.3g})")
    return h[:2] / h[2]


@dataclass(frozen=True, eq=False)
class SfmScene:
    """Cameras, 3D points and weighted 2D observations.

    Observation ``k`` says camera ``cam_idx[k]`` saw point ``pt_idx[k]`` at
    ``pixels[k]`` with mask weight ``weights[k]``.
    """

    cameras: tuple
    points: np.ndarray
    cam_idx: np.ndarray
    pt_idx: np.ndarray
    pixels: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        ci = np.array(self.cam_idx, dtype=np.int64).reshape(-1)
        pj = np.array(self.pt_idx, dtype=np.int64).reshape(-1)
        px = np.array(self.pixels, dtype=float).reshape(-1, 2)
        w = np.ones(len(ci)) if self.weights is None else np.array(self.weights, dtype=float).reshape(-1)
        cams = tuple(self.cameras)
        if not (len(ci) == len(pj) == len(px) == len(w)):
            raise InvalidScene("observation arrays have different lengths")
        if len(ci) and (ci.min() < 0 or ci.max() >= len(cams) or pj.min() < 0 or pj.max() >= len(pts)):
            raise InvalidScene("observation references a missing camera or point")
        if np.any((w < 0) | (w > 1)) or not np.all(np.isfinite(w)):
            raise InvalidScene("mask weights must lie in [0, 1]")
        if len(np.unique(ci * max(len(pts), 1) + pj)) != len(ci):
            raise InvalidScene("more than one observation for a (camera, point) pair")
        for a in (pts, ci, pj, px, w):
            a.setflags(write=False)
        object.__setattr__(self, "cameras", cams)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cam_idx", ci)
        object.__setattr__(self, "pt_idx", pj)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "weights", w)

    @property
    def n_observations(self):
        return len(self.cam_idx)

    def with_weights(self, weights):
        return replace(self, weights=np.asarray(weights, dtype=float))

    def with_params(self, cameras=None, points=None):
        return replace(self, cameras=self.cameras if cameras is None else tuple(cameras),
                       points=self.points if points is None else points)


def _project_all(scene):
    """Projected pixels of every observation (vectorised); raises on |w| <= 1e-12."""
    Rs = np.array([c.R for c in scene.cameras])
    ts = np.array([c.translation for c in scene.cameras])
    fs = np.array([c.focal for c in scene.cameras])
    cs = np.array([c.principal for c in scene.cameras])
    ci, pj = scene.cam_idx, scene.pt_idx
    Xc = np.einsum("kij,kj->ki", Rs[ci], scene.points[pj]) + ts[ci]
    z = Xc[:, 2]
    bad = np.nonzero(np.abs(z) <= W_EPS)[0]
    if len(bad):
        k = int(bad[0])
        raise ProjectionError(k, int(ci[k]), int(pj[k]), "point at infinity")
    uv = fs[ci, None] * Xc[:, :2] / z[:, None] + cs[ci]
    return uv, Xc, Rs


def total_error(scene):
    """Sum of squared reprojection errors over all observations (px^2)."""
    uv, _, _ = _project_all(scene)
    # same per-observation reduction as masked_error, so unit weights agree bit for bit
    return float(np.sum(np.sum((scene.pixels - uv) ** 2, axis=1)))


def masked_error(scene):
    """Mask-weighted sum of squared reprojection errors (px^2)."""
    uv, _, _ = _project_all(scene)
    return float(np.sum(scene.weights * np.sum((scene.pixels - uv) ** 2, axis=1)))


def reprojection_rms(scene, weighted_only=True):
    uv, _, _ = _project_all(scene)
    e2 = np.sum((scene.pixels - uv) ** 2, axis=1)
    sel = scene.weights > 0 if weighted_only else np.ones(len(e2), dtype=bool)
    return float(np.sqrt(e2[sel].mean())) if sel.any() else 0.0


# -- parameter layout --------------------------------------------------------------


def _tangent_basis(u):
    helper = np.eye(3)[np.argmin(np.abs(u))]
    b1 = np.cross(u, helper)
    b1 /= np.linalg.norm(b1)
    return np.stack([b1, np.cross(u, b1)], axis=1)


@dataclass
class _Layout:
    """Where each camera/point block lives in the flat parameter vector."""

    cam_offset: np.ndarray  # -1 for frozen cameras
    cam_size: np.ndarray  # 0, 5 (scale-gauge camera) or 6
    pt_offset: np.ndarray  # -1 for fixed points
    n_params: int
    gauge_cam: int
    gauge_basis: np.ndarray = None  # 3x2, only for gauge_cam


def _layout(scene, frozen_cameras=(0,), scale_gauge_camera=1):
    m, n = len(scene.cameras), len(scene.points)
    frozen = set(frozen_cameras)
    cam_offset = np.full(m, -1)
    cam_size = np.zeros(m, dtype=int)
    off = 0
    basis = None
    for i in range(m):
        if i in frozen:
            continue
        cam_offset[i] = off
        if i == scale_gauge_camera:
            t = scene.cameras[i].translation
            if np.linalg.norm(t) == 0:
                raise InvalidConfig("scale-gauge camera needs a non-zero translation")
            basis = _tangent_basis(t / np.linalg.norm(t))
            cam_size[i] = 5
        else:
            cam_size[i] = 6
        off += cam_size[i]
    wobs = np.bincount(scene.pt_idx[scene.weights > 0], minlength=n)
    lonely = np.nonzero(wobs == 1)[0]
    if len(lonely):
        raise UnderConstrained(f"point {int(lonely[0])} has only one weighted observation")
    pt_offset = np.full(n, -1)
    free = np.nonzero(wobs >= 2)[0]
    pt_offset[free] = off + 3 * np.arange(len(free))
    off += 3 * len(free)
    return _Layout(cam_offset, cam_size, pt_offset, off, scale_gauge_camera, basis)


def _apply_step(scene, layout, delta):
    cams = list(scene.cameras)
    for i, cam in enumerate(cams):
        o = layout.cam_offset[i]
        if o < 0:
            continue
        r = cam.rotation + delta[o:o + 3]
        if layout.cam_size[i] == 5:
            t0 = cam.translation
            rho = np.linalg.norm(t0)
            u = t0 / rho + layout.gauge_basis @ delta[o + 3:o + 5]
            t = rho * u / np.linalg.norm(u)
        else:
            t = cam.translation + delta[o + 3:o + 6]
        cams[i] = CameraParams(cam.focal, cam.principal, r, t)
    pts = scene.points.copy()
    free = layout.pt_offset >= 0
    idx = layout.pt_offset[free]
    pts[free] += delta[idx[:, None] + np.arange(3)]
    return scene.with_params(cameras=cams, points=pts)


def residuals_and_jacobian(scene, layout=None, frozen_cameras=(0,), scale_gauge_camera=1):
    """Weighted residuals ``sqrt(M) (proj - x)`` and their sparse Jacobian.

    Columns follow the gauge-fixed layout: frozen cameras contribute nothing,
    the scale-gauge camera has 3 rotation + 2 tangent translation columns,
    other cameras 6, and every point with >= 2 weighted observations 3.
    """
    if layout is None:
        layout = _layout(scene, frozen_cameras, scale_gauge_camera)
    uv, Xc, Rs = _project_all(scene)
    sw = np.sqrt(scene.weights)
    res = (sw[:, None] * (uv - scene.pixels)).ravel()

    ci, pj = scene.cam_idx, scene.pt_idx
    k_obs = len(ci)
    fs = np.array([c.focal for c in scene.cameras])[ci]
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    # d(u, v) / d Xc  -> (k, 2, 3)
    dproj = np.zeros((k_obs, 2, 3))
    dproj[:, 0, 0] = fs / z
    dproj[:, 0, 2] = -fs * x / z ** 2
    dproj[:, 1, 1] = fs / z
    dproj[:, 1, 2] = -fs * y / z ** 2
    dproj *= sw[:, None, None]

    rows, cols, vals = [], [], []
    base_rows = 2 * np.arange(k_obs)

    def put(obs, blocks, col0):
        # blocks: (len(obs), 2, w) dense derivative blocks at columns col0[:, None] + arange(w)
        w = blocks.shape[2]
        r = (base_rows[obs][:, None, None] + np.arange(2)[None, :, None]).repeat(w, axis=2)
        c = (col0[:, None, None] + np.arange(w)[None, None, :]).repeat(2, axis=1)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(blocks.ravel())

    cam_off = layout.cam_offset[ci]
    for i in np.unique(ci[cam_off >= 0]):
        obs = np.nonzero(ci == i)[0]
        cam = scene.cameras[i]
        R = Rs[i]
        dR = np.array([rotate_jacobian(cam.rotation, scene.points[j], R) for j in pj[obs]])
        d_rot = np.einsum("kab,kbc->kac", dproj[obs], dR)
        if layout.cam_size[i] == 5:
            dt = np.linalg.norm(cam.translation) * layout.gauge_basis
            d_t = np.einsum("kab,bc->kac", dproj[obs], dt)
        else:
            d_t = dproj[obs]
        put(obs, np.concatenate([d_rot, d_t], axis=2), np.full(len(obs), layout.cam_offset[i]))

    pt_off = layout.pt_offset[pj]
    obs = np.nonzero(pt_off >= 0)[0]
    if len(obs):
        d_pt = np.einsum("kab,kbc->kac", dproj[obs], Rs[ci[obs]])
        put(obs, d_pt, pt_off[obs])

    if rows:
        J = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(2 * k_obs, layout.n_params))
    else:
        J = sp.csr_matrix((2 * k_obs, layout.n_params))
    return res, J, layout


@dataclass
class BAOptions:
    max_iters: int = 100
    initial_damping: float = 1e-3
    damping_increase: float = 10.0
    damping_decrease: float = 0.1
    max_damping: float = 1e12
    rel_tol: float = 1e-10
    grad_tol: float = 1e-8
    step_tol: float = 1e-14
    frozen_cameras: tuple = (0,)
    scale_gauge_camera: int = 1


@dataclass
class BAReport:
    iterations: int
    initial_objective: float
    final_objective: float
    termination: str
    accepted_objectives: list = field(default_factory=list)
    rejected_steps: int = 0
    final_damping: float = 0.0

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "initial_objective": self.initial_objective,
            "final_objective": self.final_objective,
            "termination": self.termination,
            "accepted_objectives": list(self.accepted_objectives),
            "rejected_steps": self.rejected_steps,
            "final_damping": self.final_damping,
        }


def _objective(res):
    return float(res @ res)


def bundle_adjust(scene, options=None):
    """Levenberg-Marquardt minimisation of the masked reprojection error.

    Camera 0 is frozen and the norm of camera 1's translation is held fixed
    (gauge).  Returns ``(refined_scene, report)``; the input is not modified.
    """
    opt = options or BAOptions()
    if len(scene.cameras) < 2:
        raise InvalidConfig("bundle adjustment needs at least two cameras")
    layout = _layout(scene, opt.frozen_cameras, opt.scale_gauge_camera)
    res, J, _ = residuals_and_jacobian(scene, layout)
    f = _objective(res)
    report = BAReport(0, f, f, "max_iterations", [f])
    lam = opt.initial_damping
    cur = scene
    for it in range(opt.max_iters):
        g = J.T @ res
        if layout.n_params == 0 or np.abs(g).max() < opt.grad_tol:
            report.termination = "gradient"
            break
        A = (J.T @ J).tocsc()
        d = A.diagonal()
        d = np.maximum(d, 1e-12 * max(d.max(), 1e-300))
        while True:
            try:
                step = spla.spsolve(A + lam * sp.diags(d, format="csc"), -g)
            except RuntimeError as exc:
                raise SingularSystem(str(exc)) from None
            if not np.all(np.isfinite(step)):
                raise SingularSystem("normal equations produced a non-finite step")
            cand = _apply_step(cur, layout, step)
            try:
                res_new = _weighted_residuals(cand)
                f_new = _objective(res_new)
            except ProjectionError:
                f_new = np.inf
            if f_new < f:
                lam = max(lam * opt.damping_decrease, 1e-300)
                break
            report.rejected_steps += 1
            scale = np.abs(_flat_params(cur, layout)).max() + 1e-12
            if np.abs(step).max() <= opt.step_tol * scale:
                report.termination = "step"
                report.iterations = it
                report.final_objective = f
                report.final_damping = lam
                return cur, report
            lam *= opt.damping_increase
            if lam > opt.max_damping:
                raise DivergenceDetected(f"damping exceeded {opt.max_damping:g} at iteration {it}")
        rel = (f - f_new) / f if f > 0 else 0.0
        cur = cand
        # the scale-gauge tangent basis follows the current translation
        layout = _layout(cur, opt.frozen_cameras, opt.scale_gauge_camera)
        res, J, _ = residuals_and_jacobian(cur, layout)
        f = f_new
        report.accepted_objectives.append(f)
        report.iterations = it + 1
        if rel < opt.rel_tol:
            report.termination = "objective"
            break
    report.final_objective = f
    report.final_damping = lam
    return cur, report


def _weighted_residuals(scene):
    uv, _, _ = _project_all(scene)
    return (np.sqrt(scene.weights)[:, None] * (uv - scene.pixels)).ravel()


def _flat_params(scene, layout):
    out = np.zeros(layout.n_params)
    for i, cam in enumerate(scene.cameras):
        o = layout.cam_offset[i]
        if o >= 0:
            out[o:o + 3] = cam.rotation
            if layout.cam_size[i] == 6:
                out[o + 3:o + 6] = cam.translation
    free = layout.pt_offset >= 0
    idx = layout.pt_offset[free]
    out[(idx[:, None] + np.arange(3)).ravel()] = scene.points[free].ravel()
    return out


# -- synthetic turntable scenes ---------------------------------------------------------


def look_at_camera(center, target=(0.0, 0.0, 0.0), focal=1000.0, principal=(640.0, 480.0), up=(0.0, 0.0, 1.0)):
    """Camera at ``center`` looking at ``target`` (x right, y down, z forward)."""
    C = np.asarray(center, dtype=float)
    fwd = np.asarray(target, dtype=float) - C
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return CameraParams(focal, principal, rotvec_from_matrix(R), -R @ C)


def generate_turntable_scene(n_views=12, elevation_deg=35.0, camera_distance=60.0, object_points=200,
                             pixel_noise_std=0.0, seed=0, focal=1000.0, image_size=(1280, 960),
                             semi_axes=(6.0, 8.0, 11.0), elevation_range=(30.0, 45.0)):
    """Cameras on a ring at a fixed elevation looking at the origin.

    ``object_points`` is either an (n, 3) array or a count of points drawn
    on an ellipsoid with ``semi_axes``.  Returns ``(scene, truth)`` where
    ``truth`` holds the exact observations.
    """
    if n_views < 2:
        raise InvalidConfig("need at least 2 views")
    lo, hi = elevation_range
    if not lo <= elevation_deg <= hi:
        raise InvalidConfig(f"elevation {elevation_deg} outside [{lo}, {hi}] degrees")
    if not camera_distance > 0 or pixel_noise_std < 0:
        raise InvalidConfig("camera_distance must be positive and noise non-negative")
    rng = np.random.default_rng(seed)
    if np.ndim(object_points) == 0:
        d = rng.normal(size=(int(object_points), 3))
        pts = d / np.linalg.norm(d, axis=1, keepdims=True) * np.asarray(semi_axes, dtype=float)
    else:
        pts = np.asarray(object_points, dtype=float).reshape(-1, 3)
    el = np.deg2rad(elevation_deg)
    principal = ((image_size[0] - 1) / 2, (image_size[1] - 1) / 2)
    cams = []
    for k in range(n_views):
        az = 2 * np.pi * k / n_views
        C = camera_distance * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(look_at_camera(C, focal=focal, principal=principal))
    ci, pj = np.meshgrid(np.arange(n_views), np.arange(len(pts)), indexing="ij")
    truth = SfmScene(cams, pts, ci.ravel(), pj.ravel(), np.zeros((ci.size, 2)))
    exact, _, _ = _project_all(truth)
    truth = replace(truth, pixels=exact)
    noisy = exact + rng.normal(scale=pixel_noise_std, size=exact.shape) if pixel_noise_std > 0 else exact.copy()
    return replace(truth, pixels=noisy), truth


def perturb_scene(scene, rng, rot_deg=2.0, trans_frac=0.02, point_frac=0.01, frozen_cameras=(0,)):
    """Initial guess: rotate cameras by ``rot_deg`` about random axes, scale-jitter
    translations by ``trans_frac`` of their norm and points by ``point_frac`` of
    the cloud diameter."""
    cams = list(scene.cameras)
    for i, cam in enumerate(cams):
        if i in frozen_cameras:
            continue
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        R = rodrigues(np.deg2rad(rot_deg) * axis) @ cam.R
        dt = rng.normal(size=3)
        dt *= trans_frac * np.linalg.norm(cam.translation) / np.linalg.norm(dt)
        cams[i] = CameraParams(cam.focal, cam.principal, rotvec_from_matrix(R), cam.translation + dt)
    pts = scene.points
    diam = np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))
    jitter = rng.normal(size=pts.shape)
    jitter *= point_frac * diam / np.linalg.norm(jitter, axis=1, keepdims=True)
    return scene.with_params(cameras=cams, points=pts + jitter)


def add_clutter(scene, fraction=0.3, seed=0, views_per_point=3, offset_px=40.0, masked=True):
    """Append background features with inconsistent observations.

    Adds about ``fraction * n_observations`` spurious observations belonging to
    new 3D points near the object.  Their mask weights are 0 when ``masked``
    and 1 otherwise; existing weights are kept.  Returns
    ``(scene, n_foreground_points)``.
    """
    rng = np.random.default_rng(seed)
    n_obs = int(round(fraction * scene.n_observations))
    n_new = max(1, n_obs // views_per_point)
    m = len(scene.cameras)
    pts = scene.points
    spread = np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))
    center = pts.mean(axis=0)
    new_pts = center + rng.uniform(-1.0, 1.0, size=(n_new, 3)) * spread
    ci, pj, px = [], [], []
    for k in range(n_new):
        views = rng.choice(m, size=views_per_point, replace=False)
        for i in np.sort(views):
            P = projection_matrix(scene.cameras[i])
            ci.append(i)
            pj.append(len(pts) + k)
            px.append(project(P, new_pts[k]) + rng.uniform(-offset_px, offset_px, size=2))
    w_new = np.zeros(len(ci)) if masked else np.ones(len(ci))
    out = SfmScene(
        scene.cameras,
        np.vstack([pts, new_pts]),
        np.concatenate([scene.cam_idx, ci]),
        np.concatenate([scene.pt_idx, pj]),
        np.vstack([scene.pixels, np.array(px).reshape(-1, 2)]),
        np.concatenate([scene.weights, w_new]),
    )
    return out, len(pts)


def transform_scene(scene, transform):
    """Apply ``X -> s R X + t`` to the points and move the cameras along.

    Every projection is unchanged: with ``R_c' = R_c R^T`` and
    ``t_c' = s t_c - R_c' t`` the camera-frame point becomes ``s`` times the
    original, which the perspective division cancels.
    """
    R, t, s = transform.rotation, transform.translation, transform.scale
    cams = []
    for cam in scene.cameras:
        Rc = cam.R @ R.T
        cams.append(CameraParams(cam.focal, cam.principal, rotvec_from_matrix(Rc), s * cam.translation - Rc @ t))
    pts = s * scene.points @ R.T + t
    return scene.with_params(cameras=cams, points=pts)
