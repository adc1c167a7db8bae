"""Kernel dispatch: the compiled extension when built, else numpy.

Set ``SGRISK_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("SGRISK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def scatter_add_rows(out, idx, src):
    """In place ``out[idx[i]] += src[i]``; ``out`` must be C-contiguous 2-D float64."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if out.ndim != 2:
        # vectors and higher ranks go through a 2-D view
        out2 = out.reshape(out.shape[0], -1)
        _impl.scatter_add_rows(out2, idx, src.reshape(src.shape[0], -1))
        return
    _impl.scatter_add_rows(out, idx, src)


def segment_max(x, seg, n_seg):
    """Per-segment column max and the lowest row index attaining it."""
    return _impl.segment_max(np.ascontiguousarray(x, dtype=np.float64),
                             np.ascontiguousarray(seg, dtype=np.int64), n_seg)


def segment_topk(scores, ptr, k):
    return _impl.segment_topk(np.ascontiguousarray(scores, dtype=np.float64),
                              np.asarray(ptr, dtype=np.int64), np.asarray(k, dtype=np.int64))


def available_backends():
    found = {"python": _pykernels}
    try:
        from . import _ckernels
        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
