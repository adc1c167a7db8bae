"""Planar homographies for image to bird's-eye ground-plane projection."""
from __future__ import annotations

import itertools

import numpy as np


class GeometryError(ValueError):
    pass


def _collinear(p, q, r, tol):
    return abs((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])) <= tol


def _normalizer(pts):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def normalize(h):
    h = np.asarray(h, dtype=float).reshape(3, 3)
    if abs(h[2, 2]) < 1e-12:
        raise GeometryError("homography has zero bottom-right entry")
    h = h / h[2, 2]
    if abs(np.linalg.det(h)) <= 1e-9:
        raise GeometryError("homography is singular")
    return h


def estimate_homography(src, dst):
    """Least-squares DLT with Hartley normalization; maps ``src`` onto ``dst``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise GeometryError("correspondences must be two equal (N, 2) arrays")
    if len(src) < 4:
        raise GeometryError(f"need at least 4 correspondences, got {len(src)}")
    scale = max(np.ptp(src, axis=0).max(), 1e-12)
    if len(src) == 4 and any(_collinear(*tri, 1e-9 * scale * scale)
                             for tri in itertools.combinations(src, 3)):
        raise GeometryError("three source points are collinear")

    ts, td = _normalizer(src), _normalizer(dst)
    s = (ts @ np.c_[src, np.ones(len(src))].T).T
    d = (td @ np.c_[dst, np.ones(len(dst))].T).T
    rows = []
    for (x, y, _), (u, v, _) in zip(s, d):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    a = np.array(rows)
    _, sv, vt = np.linalg.svd(a)
    if sv[7] <= 1e-10 * sv[0]:
        raise GeometryError("degenerate correspondence configuration")
    h = np.linalg.inv(td) @ vt[-1].reshape(3, 3) @ ts
    return normalize(h)


def project_to_birdseye(h, pixel):
    u, v = pixel
    x, y, w = np.asarray(h, dtype=float) @ np.array([u, v, 1.0])
    if abs(w) < 1e-12:
        raise GeometryError(f"pixel {pixel} maps to infinity")
    return (x / w, y / w)


def invert(h):
    return normalize(np.linalg.inv(np.asarray(h, dtype=float)))
