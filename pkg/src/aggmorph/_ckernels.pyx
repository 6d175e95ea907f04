# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; behaviour mirrors ``aggmorph._pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, floor
from libc.stdlib cimport qsort

from ._tables import MS_COUNTS, MS_TABLE

cnp.import_array()


def rasterize_triangles(tri, Py_ssize_t width, Py_ssize_t height):
    cdef const double[:, :, ::1] t = np.ascontiguousarray(tri, dtype=np.float64)
    out_arr = np.zeros((height, width), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef Py_ssize_t k, r, c, rmin, rmax, cmin, cmax
    cdef double x0, y0, x1, y1, x2, y2, area, px, py, w0, w1, w2, sgn
    with nogil:
        for k in range(t.shape[0]):
            x0 = t[k, 0, 0]; y0 = t[k, 0, 1]
            x1 = t[k, 1, 0]; y1 = t[k, 1, 1]
            x2 = t[k, 2, 0]; y2 = t[k, 2, 1]
            area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
            if area == 0.0:
                continue
            sgn = 1.0 if area > 0.0 else -1.0
            cmin = <Py_ssize_t>ceil(min(x0, min(x1, x2)))
            cmax = <Py_ssize_t>floor(max(x0, max(x1, x2)))
            rmin = <Py_ssize_t>ceil(min(y0, min(y1, y2)))
            rmax = <Py_ssize_t>floor(max(y0, max(y1, y2)))
            if cmin < 0:
                cmin = 0
            if rmin < 0:
                rmin = 0
            if cmax > width - 1:
                cmax = width - 1
            if rmax > height - 1:
                rmax = height - 1
            for r in range(rmin, rmax + 1):
                py = <double>r
                for c in range(cmin, cmax + 1):
                    px = <double>c
                    w0 = sgn * ((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0))
                    if w0 < 0.0:
                        continue
                    w1 = sgn * ((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1))
                    if w1 < 0.0:
                        continue
                    w2 = sgn * ((x0 - x2) * (py - y2) - (y0 - y2) * (px - x2))
                    if w2 < 0.0:
                        continue
                    out[r, c] = 1
    return out_arr


def marching_squares_segments(grid):
    cdef const unsigned char[:, ::1] g = np.ascontiguousarray(np.asarray(grid) != 0, dtype=np.uint8)
    cdef const long long[:, :, ::1] table = np.ascontiguousarray(MS_TABLE, dtype=np.int64)
    cdef const long long[::1] counts = np.ascontiguousarray(MS_COUNTS, dtype=np.int64)
    cdef Py_ssize_t h = g.shape[0], w = g.shape[1]
    if h < 2 or w < 2:
        return np.zeros((0, 4), dtype=np.int64)
    cdef Py_ssize_t r, c, s, n = 0, code, total = 0
    with nogil:
        for r in range(h - 1):
            for c in range(w - 1):
                code = 8 * g[r, c] + 4 * g[r, c + 1] + 2 * g[r + 1, c + 1] + g[r + 1, c]
                total += counts[code]
    out_arr = np.empty((total, 4), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    with nogil:
        for r in range(h - 1):
            for c in range(w - 1):
                code = 8 * g[r, c] + 4 * g[r, c + 1] + 2 * g[r + 1, c + 1] + g[r + 1, c]
                for s in range(counts[code]):
                    out[n, 0] = 2 * r + table[code, s, 0]
                    out[n, 1] = 2 * c + table[code, s, 1]
                    out[n, 2] = 2 * r + table[code, s, 2]
                    out[n, 3] = 2 * c + table[code, s, 3]
                    n += 1
    return out_arr


def max_pairwise_sq(points):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], d = p.shape[1], i, j, k
    cdef double best = -1.0, acc, diff
    cdef Py_ssize_t bi = -1, bj = -1
    if n < 2:
        return 0.0, 0, 0
    with nogil:
        for i in range(n - 1):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    diff = p[i, k] - p[j, k]
                    acc = acc + diff * diff
                if acc > best:
                    best = acc
                    bi = i
                    bj = j
    return best, bi, bj


def box_volumes(points, rotations):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, :, ::1] rot = np.ascontiguousarray(rotations, dtype=np.float64)
    out_arr = np.empty(rot.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k, n, a
    cdef double v, lo0, hi0, lo1, hi1, lo2, hi2
    cdef Py_ssize_t npts = p.shape[0]
    if npts == 0:
        out_arr[:] = 0.0
        return out_arr
    with nogil:
        for k in range(rot.shape[0]):
            lo0 = hi0 = rot[k, 0, 0] * p[0, 0] + rot[k, 0, 1] * p[0, 1] + rot[k, 0, 2] * p[0, 2]
            lo1 = hi1 = rot[k, 1, 0] * p[0, 0] + rot[k, 1, 1] * p[0, 1] + rot[k, 1, 2] * p[0, 2]
            lo2 = hi2 = rot[k, 2, 0] * p[0, 0] + rot[k, 2, 1] * p[0, 1] + rot[k, 2, 2] * p[0, 2]
            for n in range(1, npts):
                v = rot[k, 0, 0] * p[n, 0] + rot[k, 0, 1] * p[n, 1] + rot[k, 0, 2] * p[n, 2]
                if v < lo0:
                    lo0 = v
                elif v > hi0:
                    hi0 = v
                v = rot[k, 1, 0] * p[n, 0] + rot[k, 1, 1] * p[n, 1] + rot[k, 1, 2] * p[n, 2]
                if v < lo1:
                    lo1 = v
                elif v > hi1:
                    hi1 = v
                v = rot[k, 2, 0] * p[n, 0] + rot[k, 2, 1] * p[n, 1] + rot[k, 2, 2] * p[n, 2]
                if v < lo2:
                    lo2 = v
                elif v > hi2:
                    hi2 = v
            out[k] = (hi0 - lo0) * (hi1 - lo1) * (hi2 - lo2)
    return out_arr


cdef inline double _orient(double ax, double ay, double bx, double by, double cx, double cy) noexcept nogil:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


cdef inline bint _on_segment(double ax, double ay, double bx, double by, double px, double py) noexcept nogil:
    return (min(ax, bx) <= px <= max(ax, bx)) and (min(ay, by) <= py <= max(ay, by))


def polygon_self_intersection(xy):
    cdef const double[:, ::1] p = np.ascontiguousarray(xy, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], i, j, i1, j1
    cdef double ax, ay, bx, by, cx, cy, dx, dy, o1, o2, o3, o4
    cdef Py_ssize_t hi = -1, hj = -1
    if n < 4:
        return -1, -1
    with nogil:
        for i in range(n):
            i1 = i + 1 if i + 1 < n else 0
            ax = p[i, 0]; ay = p[i, 1]; bx = p[i1, 0]; by = p[i1, 1]
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                j1 = j + 1 if j + 1 < n else 0
                cx = p[j, 0]; cy = p[j, 1]; dx = p[j1, 0]; dy = p[j1, 1]
                if min(ax, bx) > max(cx, dx) or min(cx, dx) > max(ax, bx):
                    continue
                if min(ay, by) > max(cy, dy) or min(cy, dy) > max(ay, by):
                    continue
                o1 = _orient(ax, ay, bx, by, cx, cy)
                o2 = _orient(ax, ay, bx, by, dx, dy)
                o3 = _orient(cx, cy, dx, dy, ax, ay)
                o4 = _orient(cx, cy, dx, dy, bx, by)
                if (((o1 > 0 and o2 < 0) or (o1 < 0 and o2 > 0))
                        and ((o3 > 0 and o4 < 0) or (o3 < 0 and o4 > 0))):
                    hi = i; hj = j
                    break
                if ((o1 == 0 and _on_segment(ax, ay, bx, by, cx, cy))
                        or (o2 == 0 and _on_segment(ax, ay, bx, by, dx, dy))
                        or (o3 == 0 and _on_segment(cx, cy, dx, dy, ax, ay))
                        or (o4 == 0 and _on_segment(cx, cy, dx, dy, bx, by))):
                    hi = i; hj = j
                    break
            if hi >= 0:
                break
    return hi, hj


cdef inline double _dot(double ax, double ay, double bx, double by) noexcept nogil:
    return ax * bx + ay * by


cdef double *_sort_x
cdef double *_sort_y


cdef int _cmp_xy(const void *a, const void *b) noexcept nogil:
    cdef Py_ssize_t i = (<Py_ssize_t *>a)[0], j = (<Py_ssize_t *>b)[0]
    if _sort_x[i] < _sort_x[j]:
        return -1
    if _sort_x[i] > _sort_x[j]:
        return 1
    if _sort_y[i] < _sort_y[j]:
        return -1
    if _sort_y[i] > _sort_y[j]:
        return 1
    return (i > j) - (i < j)


def normal_boxes(points, normals, us, ws):
    """For each normal, the smallest box with one face perpendicular to it.

    The in-plane rectangle is the minimum-area one flush with an edge of the
    projected 2D hull (monotone chain).  Returns ``(volumes, directions)``
    where ``directions[k]`` is the 3D unit vector of the flush edge.
    """
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] nv = np.ascontiguousarray(normals, dtype=np.float64)
    cdef const double[:, ::1] uv = np.ascontiguousarray(us, dtype=np.float64)
    cdef const double[:, ::1] wv = np.ascontiguousarray(ws, dtype=np.float64)
    cdef Py_ssize_t npts = p.shape[0], nk = nv.shape[0]
    xs_arr = np.empty(npts)
    ys_arr = np.empty(npts)
    cdef double[::1] xs = xs_arr, ys = ys_arr
    hull_arr = np.empty(2 * npts + 2, dtype=np.intp)
    cdef Py_ssize_t[::1] hull = hull_arr
    vol_arr = np.full(nk, np.inf)
    dir_arr = np.zeros((nk, 3))
    cdef double[::1] vol = vol_arr
    cdef double[:, ::1] dirs = dir_arr
    order_arr = np.empty(npts, dtype=np.intp)
    cdef Py_ssize_t[::1] order = order_arr
    global _sort_x, _sort_y
    cdef Py_ssize_t k, i, m, t, lower, e, q, jmax, jmin, jfar, nsel
    cdef Py_ssize_t ext[16]
    cdef double cdir[16]
    cdef double sdir[16]
    cdef bint inside
    for t in range(16):
        cdir[t] = np.cos(2 * np.pi * t / 16)
        sdir[t] = np.sin(2 * np.pi * t / 16)
    cdef double hlo, hhi, h, ex, ey, ln, a0, a1, b0, b1, s, area, best_area, bex, bey
    for k in range(nk):
        with nogil:
            hlo = hhi = nv[k, 0] * p[0, 0] + nv[k, 1] * p[0, 1] + nv[k, 2] * p[0, 2]
            for i in range(npts):
                h = nv[k, 0] * p[i, 0] + nv[k, 1] * p[i, 1] + nv[k, 2] * p[i, 2]
                if h < hlo:
                    hlo = h
                if h > hhi:
                    hhi = h
                xs[i] = uv[k, 0] * p[i, 0] + uv[k, 1] * p[i, 1] + uv[k, 2] * p[i, 2]
                ys[i] = wv[k, 0] * p[i, 0] + wv[k, 1] * p[i, 1] + wv[k, 2] * p[i, 2]
            # Akl-Toussaint: drop points strictly inside the polygon of extremes
            for t in range(16):
                ext[t] = 0
                for i in range(1, npts):
                    if cdir[t] * xs[i] + sdir[t] * ys[i] > cdir[t] * xs[ext[t]] + sdir[t] * ys[ext[t]]:
                        ext[t] = i
            nsel = 0
            for i in range(npts):
                inside = 1
                for t in range(16):
                    q = ext[t]
                    e = ext[(t + 1) % 16]
                    if q == e:
                        continue
                    if _orient(xs[q], ys[q], xs[e], ys[e], xs[i], ys[i]) <= 0:
                        inside = 0
                        break
                if not inside:
                    order[nsel] = i
                    nsel += 1
        # the comparator reads module globals, so sorting keeps the GIL
        _sort_x = &xs[0]
        _sort_y = &ys[0]
        qsort(&order[0], nsel, sizeof(Py_ssize_t), _cmp_xy)
        with nogil:
            m = 0
            for t in range(nsel):
                i = order[t]
                while m >= 2 and _orient(xs[hull[m - 2]], ys[hull[m - 2]], xs[hull[m - 1]], ys[hull[m - 1]], xs[i], ys[i]) <= 0:
                    m -= 1
                hull[m] = i
                m += 1
            lower = m + 1
            for t in range(nsel - 2, -1, -1):
                i = order[t]
                while m >= lower and _orient(xs[hull[m - 2]], ys[hull[m - 2]], xs[hull[m - 1]], ys[hull[m - 1]], xs[i], ys[i]) <= 0:
                    m -= 1
                hull[m] = i
                m += 1
            m -= 1  # last point repeats the first
            best_area = -1.0
            bex = 1.0
            bey = 0.0
            # rotating calipers over the CCW hull: pointers to the vertices that
            # are extreme along the edge (max, min) and along its inward normal
            jmax = 0
            jmin = 0
            jfar = 0
            for e in range(m):
                ex = xs[hull[e + 1]] - xs[hull[e]]
                ey = ys[hull[e + 1]] - ys[hull[e]]
                ln = (ex * ex + ey * ey) ** 0.5
                if ln == 0.0:
                    continue
                ex = ex / ln
                ey = ey / ln
                if best_area < 0.0:
                    for q in range(m):
                        if _dot(ex, ey, xs[hull[q]], ys[hull[q]]) > _dot(ex, ey, xs[hull[jmax]], ys[hull[jmax]]):
                            jmax = q
                        if _dot(ex, ey, xs[hull[q]], ys[hull[q]]) < _dot(ex, ey, xs[hull[jmin]], ys[hull[jmin]]):
                            jmin = q
                        if _dot(-ey, ex, xs[hull[q]], ys[hull[q]]) > _dot(-ey, ex, xs[hull[jfar]], ys[hull[jfar]]):
                            jfar = q
                else:
                    for t in range(m):
                        q = jmax + 1 if jmax + 1 < m else 0
                        if _dot(ex, ey, xs[hull[q]], ys[hull[q]]) >= _dot(ex, ey, xs[hull[jmax]], ys[hull[jmax]]):
                            jmax = q
                        else:
                            break
                    for t in range(m):
                        q = jmin + 1 if jmin + 1 < m else 0
                        if _dot(ex, ey, xs[hull[q]], ys[hull[q]]) <= _dot(ex, ey, xs[hull[jmin]], ys[hull[jmin]]):
                            jmin = q
                        else:
                            break
                    for t in range(m):
                        q = jfar + 1 if jfar + 1 < m else 0
                        if _dot(-ey, ex, xs[hull[q]], ys[hull[q]]) >= _dot(-ey, ex, xs[hull[jfar]], ys[hull[jfar]]):
                            jfar = q
                        else:
                            break
                a0 = _dot(ex, ey, xs[hull[jmin]], ys[hull[jmin]])
                a1 = _dot(ex, ey, xs[hull[jmax]], ys[hull[jmax]])
                b0 = _dot(-ey, ex, xs[hull[e]], ys[hull[e]])
                b1 = _dot(-ey, ex, xs[hull[jfar]], ys[hull[jfar]])
                area = (a1 - a0) * (b1 - b0)
                if best_area < 0.0 or area < best_area:
                    best_area = area
                    bex = ex
                    bey = ey
            if best_area >= 0.0:
                vol[k] = best_area * (hhi - hlo)
                for i in range(3):
                    dirs[k, i] = bex * uv[k, i] + bey * wv[k, i]
    return vol_arr, dir_arr
