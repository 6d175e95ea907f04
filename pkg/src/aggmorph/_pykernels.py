"""Pure numpy implementations of the hot kernels.

Every function here has an identically named, identically behaving
counterpart in the compiled ``_ckernels`` module.
"""

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ._tables import MS_COUNTS, MS_TABLE

_CHUNK = 1 << 20


def rasterize_triangles(tri, width, height):
    """Rasterize 2D triangles given in pixel coordinates (x = column, y = row).

    A pixel is set when its centre lies inside or on the boundary of at
    least one triangle.  Degenerate (zero-area) triangles are skipped.
    """
    tri = np.ascontiguousarray(tri, dtype=np.float64)
    out = np.zeros((height, width), dtype=np.uint8)
    for t in tri:
        x0, y0 = t[0]
        x1, y1 = t[1]
        x2, y2 = t[2]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue
        cmin = max(int(np.ceil(min(x0, x1, x2))), 0)
        cmax = min(int(np.floor(max(x0, x1, x2))), width - 1)
        rmin = max(int(np.ceil(min(y0, y1, y2))), 0)
        rmax = min(int(np.floor(max(y0, y1, y2))), height - 1)
        if cmin > cmax or rmin > rmax:
            continue
        px = np.arange(cmin, cmax + 1, dtype=np.float64)[None, :]
        py = np.arange(rmin, rmax + 1, dtype=np.float64)[:, None]
        w0 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        w1 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        w2 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        if area < 0.0:
            w0, w1, w2 = -w0, -w1, -w2
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        out[rmin:rmax + 1, cmin:cmax + 1] |= inside.astype(np.uint8)
    return out


def marching_squares_segments(grid):
    """Return directed contour segments of a binary grid at iso-level 0.5.

    Rows are ``(r0, c0, r1, c1)`` in doubled integer coordinates; the cell
    scan order is row-major, matching the compiled kernel.
    """
    g = (np.asarray(grid) != 0).astype(np.int64)
    h, w = g.shape
    if h < 2 or w < 2:
        return np.zeros((0, 4), dtype=np.int64)
    code = 8 * g[:-1, :-1] + 4 * g[:-1, 1:] + 2 * g[1:, 1:] + g[1:, :-1]
    rr, cc = np.nonzero(MS_COUNTS[code] > 0)
    codes = code[rr, cc]
    base = np.stack([2 * rr, 2 * cc, 2 * rr, 2 * cc], axis=1)
    first = base + MS_TABLE[codes, 0]
    second_mask = MS_COUNTS[codes] == 2
    second = base[second_mask] + MS_TABLE[codes[second_mask], 1]
    # interleave so that each cell's segments stay adjacent, as in row-major emission
    order_first = np.arange(len(first)) * 2
    order_second = np.nonzero(second_mask)[0] * 2 + 1
    segs = np.concatenate([first, second])
    keys = np.concatenate([order_first, order_second])
    return segs[np.argsort(keys, kind="stable")]


def max_pairwise_sq(points):
    """Largest squared pairwise distance and the first (i < j) pair attaining it."""
    p = np.ascontiguousarray(points, dtype=np.float64)
    n = len(p)
    best, bi, bj = -1.0, -1, -1
    if n < 2:
        return 0.0, 0, 0
    rows = max(1, _CHUNK // max(n, 1))
    for start in range(0, n - 1, rows):
        block = p[start:start + rows]
        d = ((block[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)
        idx_i = np.arange(start, start + len(block))[:, None]
        d[np.arange(n)[None, :] <= idx_i] = -1.0
        k = int(np.argmax(d))
        val = d.flat[k]
        if val > best:
            best, bi, bj = float(val), start + k // n, k % n
    return best, int(bi), int(bj)


def box_volumes(points, rotations):
    """Volume of the bounding box of ``points`` in each frame whose rows are the axes."""
    p = np.ascontiguousarray(points, dtype=np.float64)
    rot = np.ascontiguousarray(rotations, dtype=np.float64)
    out = np.empty(len(rot))
    step = max(1, _CHUNK // max(3 * len(p), 1))
    for start in range(0, len(rot), step):
        proj = np.einsum("kij,nj->kni", rot[start:start + step], p)
        ext = proj.max(axis=1) - proj.min(axis=1)
        out[start:start + step] = ext[:, 0] * ext[:, 1] * ext[:, 2]
    return out


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _on_segment(ax, ay, bx, by, px, py):
    return ((np.minimum(ax, bx) <= px) & (px <= np.maximum(ax, bx))
            & (np.minimum(ay, by) <= py) & (py <= np.maximum(ay, by)))


def polygon_self_intersection(xy):
    """First pair (i, j) of non-adjacent closed-polygon edges that touch, else (-1, -1).

    Edge ``i`` runs from vertex ``i`` to vertex ``i + 1`` (cyclically).
    """
    p = np.ascontiguousarray(xy, dtype=np.float64)
    n = len(p)
    if n < 4:
        return -1, -1
    a = p
    b = np.roll(p, -1, axis=0)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    rows = max(1, _CHUNK // n)
    jj = np.arange(n)[None, :]
    for start in range(0, n, rows):
        ii = np.arange(start, min(start + rows, n))[:, None]
        cand = (jj > ii + 1) & ~((ii == 0) & (jj == n - 1))
        cand &= (lo[ii[:, 0]][:, None, 0] <= hi[None, :, 0]) & (lo[None, :, 0] <= hi[ii[:, 0]][:, None, 0])
        cand &= (lo[ii[:, 0]][:, None, 1] <= hi[None, :, 1]) & (lo[None, :, 1] <= hi[ii[:, 0]][:, None, 1])
        ci, cj = np.nonzero(cand)
        if len(ci) == 0:
            continue
        ci = ci + start
        ax, ay = a[ci, 0], a[ci, 1]
        bx, by = b[ci, 0], b[ci, 1]
        cx, cy = a[cj, 0], a[cj, 1]
        dx, dy = b[cj, 0], b[cj, 1]
        o1 = _orient(ax, ay, bx, by, cx, cy)
        o2 = _orient(ax, ay, bx, by, dx, dy)
        o3 = _orient(cx, cy, dx, dy, ax, ay)
        o4 = _orient(cx, cy, dx, dy, bx, by)
        hit = (((o1 > 0) & (o2 < 0)) | ((o1 < 0) & (o2 > 0))) & (((o3 > 0) & (o4 < 0)) | ((o3 < 0) & (o4 > 0)))
        hit |= (o1 == 0) & _on_segment(ax, ay, bx, by, cx, cy)
        hit |= (o2 == 0) & _on_segment(ax, ay, bx, by, dx, dy)
        hit |= (o3 == 0) & _on_segment(cx, cy, dx, dy, ax, ay)
        hit |= (o4 == 0) & _on_segment(cx, cy, dx, dy, bx, by)
        k = np.nonzero(hit)[0]
        if len(k):
            return int(ci[k[0]]), int(cj[k[0]])
    return -1, -1


def normal_boxes(points, normals, us, ws):
    """For each normal, the smallest box with one face perpendicular to it.

    Returns ``(volumes, directions)``; ``directions[k]`` is the 3D unit
    vector of the projected-hull edge the optimal rectangle is flush with.
    """
    p = np.asarray(points, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    vols = np.full(len(normals), np.inf)
    dirs = np.zeros((len(normals), 3))
    for k, (n, u, w) in enumerate(zip(normals, us, ws)):
        h = p @ n
        xy = np.stack([p @ u, p @ w], axis=1)
        try:
            hv = xy[ConvexHull(xy).vertices]
        except QhullError:
            continue
        e = np.roll(hv, -1, axis=0) - hv
        ln = np.sqrt(e[:, 0] * e[:, 0] + e[:, 1] * e[:, 1])
        e = e[ln > 0] / ln[ln > 0, None]
        a = e[:, :1] * hv[None, :, 0] + e[:, 1:] * hv[None, :, 1]
        b = -e[:, 1:] * hv[None, :, 0] + e[:, :1] * hv[None, :, 1]
        area = (a.max(axis=1) - a.min(axis=1)) * (b.max(axis=1) - b.min(axis=1))
        j = int(np.argmin(area))
        vols[k] = area[j] * (h.max() - h.min())
        dirs[k] = e[j, 0] * u + e[j, 1] * w
    return vols, dirs
