"""Marching-squares lookup table shared by both kernel backends.

Cells are indexed by their top-left pixel ``(r, c)``.  The case code is
``8*tl + 4*tr + 2*br + 1*bl``.  Edge midpoints are expressed in doubled
integer coordinates relative to ``(2r, 2c)`` so loop assembly is exact.
Saddle cells (codes 5 and 10) separate the two foreground corners, which
matches 4-connectivity of the foreground.
"""

import numpy as np

_EDGE = {"T": (0, 1), "R": (1, 2), "B": (2, 1), "L": (1, 0)}
_CORNER = {"tl": (0, 0), "tr": (0, 2), "br": (2, 2), "bl": (2, 0)}
_CORNER_EDGES = {"tl": ("L", "T"), "tr": ("T", "R"), "br": ("R", "B"), "bl": ("B", "L")}


def _orient(a, b, corner):
    # foreground on the left in (x=col, y=row) coordinates
    p, q, f = _EDGE[a], _EDGE[b], _CORNER[corner]
    dx, dy = q[1] - p[1], q[0] - p[0]
    vx, vy = f[1] - p[1], f[0] - p[0]
    return (a, b) if dx * vy - dy * vx > 0 else (b, a)


def _build():
    table = np.zeros((16, 2, 4), dtype=np.int64)
    counts = np.zeros(16, dtype=np.int64)
    for code in range(16):
        fg = [name for name, bit in (("tl", 8), ("tr", 4), ("br", 2), ("bl", 1)) if code & bit]
        if code in (5, 10):
            segs = [_orient(*_CORNER_EDGES[k], k) for k in fg]
        elif 0 < code < 15:
            crossing = []
            for edge, (c0, c1) in (("T", ("tl", "tr")), ("R", ("tr", "br")),
                                   ("B", ("br", "bl")), ("L", ("bl", "tl"))):
                if (c0 in fg) != (c1 in fg):
                    crossing.append(edge)
            segs = [_orient(crossing[0], crossing[1], fg[0])]
        else:
            segs = []
        counts[code] = len(segs)
        for k, (a, b) in enumerate(segs):
            table[code, k] = (*_EDGE[a], *_EDGE[b])
    return table, counts


MS_TABLE, MS_COUNTS = _build()
