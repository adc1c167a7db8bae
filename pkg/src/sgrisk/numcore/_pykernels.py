"""Pure numpy versions of the hot kernels.

Semantics must match ``_ckernels.pyx`` exactly; the test suite runs both.
"""
import numpy as np


def scatter_add_rows(out, idx, src):
    """In place: ``out[idx[i]] += src[i]`` with duplicate indices summed."""
    if idx.size:
        np.add.at(out, idx, src)


def segment_max(x, seg, n_seg):
    n, d = x.shape
    if np.bincount(seg, minlength=n_seg).min(initial=1) == 0:
        raise ValueError("segment_max over an empty segment")
    vals = np.full((n_seg, d), -np.inf)
    np.maximum.at(vals, seg, x)
    # lowest row index among the maxima
    rows = np.where(x == vals[seg], np.arange(n)[:, None], n)
    arg = np.full((n_seg, d), n, dtype=np.int64)
    np.minimum.at(arg, seg, rows)
    return vals, arg


def segment_topk(scores, ptr, k):
    """Indices of the ``k[g]`` largest scores in each segment ``ptr[g]:ptr[g+1]``.

    Ties go to the lower index; the result is ascending within each segment.
    """
    out = []
    for g in range(len(ptr) - 1):
        lo, hi = ptr[g], ptr[g + 1]
        s = scores[lo:hi]
        order = np.lexsort((np.arange(hi - lo), -s))[: k[g]]
        out.append(np.sort(order) + lo)
    if not out:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(out).astype(np.int64)
