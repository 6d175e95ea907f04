"""Kernel backend selection.

The compiled Cython kernels are used when importable.  Setting
``AGGMORPH_PURE_PYTHON=1`` forces the numpy fallback, which is also used
automatically when the extension was not built.
"""

import os

from . import _pykernels

BACKEND = "python"
kernels = _pykernels

if os.environ.get("AGGMORPH_PURE_PYTHON", "").strip() not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        kernels = _ckernels
        BACKEND = "cython"

rasterize_triangles = kernels.rasterize_triangles
marching_squares_segments = kernels.marching_squares_segments
max_pairwise_sq = kernels.max_pairwise_sq
box_volumes = kernels.box_volumes
polygon_self_intersection = kernels.polygon_self_intersection
normal_boxes = kernels.normal_boxes
