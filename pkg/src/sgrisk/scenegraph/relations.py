"""Rules mapping object geometry to distance, direction and lane relations."""
from __future__ import annotations

import numpy as np

from .types import (DIRECTION_SECTORS, DISTANCE_RELATIONS, DISTANCE_THRESHOLDS_FT,
                    LANE_HINTS, NEAR_THRESHOLD_FT, ObjectState, Relation)


def classify_distance(d_ft: float):
    """Tightest distance bucket with ``d <= threshold``, or None beyond 25 ft."""
    if d_ft < 0:
        raise ValueError(f"negative distance {d_ft}")
    for rel, thr in zip(DISTANCE_RELATIONS, DISTANCE_THRESHOLDS_FT):
        if d_ft <= thr:
            return rel
    return None


def distance_codes(d):
    """Vectorized ``classify_distance``: relation index, or -1 for none."""
    d = np.asarray(d, dtype=float)
    idx = np.searchsorted(np.array(DISTANCE_THRESHOLDS_FT), d, side="left")
    return np.where(idx < len(DISTANCE_THRESHOLDS_FT), idx, -1).astype(np.int64)


def sector_index(dx, dy):
    """Index into DIRECTION_SECTORS for the bearing of (dx, dy).

    Bearings are clockwise from +y (forward). Sectors are half-open
    ``[45i, 45(i+1))`` and resolved by exact comparisons, so negating the
    vector always lands exactly four sectors away. (0, 0) gives -1.
    """
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    ax, ay = np.abs(dx), np.abs(dy)
    conds = [
        (dx >= 0) & (dy > 0) & (ax < ay),
        (dx > 0) & (dy > 0) & (ax >= ay),
        (dx > 0) & (dy <= 0) & (ax > ay),
        (dx > 0) & (dy < 0) & (ax <= ay),
        (dx <= 0) & (dy < 0) & (ax < ay),
        (dx < 0) & (dy < 0) & (ax >= ay),
        (dx < 0) & (dy >= 0) & (ax > ay),
        (dx < 0) & (dy > 0) & (ax <= ay),
    ]
    return np.select(conds, list(range(8)), default=-1).astype(np.int64)


def classify_direction(src: ObjectState, dst: ObjectState):
    dx, dy = dst.x_ft - src.x_ft, dst.y_ft - src.y_ft
    if np.hypot(dx, dy) > NEAR_THRESHOLD_FT:
        return None
    s = int(sector_index(dx, dy))
    return None if s < 0 else DIRECTION_SECTORS[s]


def assign_lanes(obj: ObjectState, lane_width_ft=12.0, overlap_margin_ft=1.5, use_hint=True):
    """Lane node names for a vehicle: one lane, or two when straddling a boundary."""
    if lane_width_ft <= 0:
        raise ValueError("lane width must be positive")
    if use_hint and obj.lane_hint is not None:
        return (LANE_HINTS[obj.lane_hint],)
    half = lane_width_ft / 2.0
    x = obj.x_ft
    if abs(x + half) <= overlap_margin_ft:
        return ("Left_Lane", "Middle_Lane")
    if abs(x - half) <= overlap_margin_ft:
        return ("Middle_Lane", "Right_Lane")
    if x < -half:
        return ("Left_Lane",)
    if x > half:
        return ("Right_Lane",)
    return ("Middle_Lane",)


__all__ = ["Relation", "classify_distance", "classify_direction", "assign_lanes",
           "distance_codes", "sector_index"]
