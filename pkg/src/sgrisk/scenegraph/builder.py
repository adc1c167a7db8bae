"""Per-frame scene-graph construction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .relations import assign_lanes, distance_codes, sector_index
from .types import (DIRECTION_SECTORS, LANE_NODES, NEAR_THRESHOLD_FT, ROOT_NODE, STATIC_NODES,
                    ClipRecord, InputError, Relation, SceneGraph)


@dataclass(frozen=True)
class GraphConfig:
    lane_width_ft: float = 12.0
    overlap_margin_ft: float = 1.5
    use_lane_hints: bool = True

    def __post_init__(self):
        if self.lane_width_ft <= 0:
            raise ValueError("lane_width_ft must be positive")
        if not 0 <= self.overlap_margin_ft < self.lane_width_ft / 2:
            raise ValueError("overlap_margin_ft must be in [0, lane_width_ft / 2)")


_SECTOR_REL = np.array([int(r) for r in DIRECTION_SECTORS], dtype=np.int64)


def build_scene_graph(frame, config: GraphConfig = GraphConfig()) -> SceneGraph:
    objs = sorted(frame, key=lambda o: o.id)
    if not any(o.kind == "ego_car" for o in objs):
        raise InputError("frame has no ego vehicle")
    ids = [o.id for o in objs]
    if len(set(ids)) != len(ids):
        raise InputError("object ids must be unique within a frame")

    n_static = len(STATIC_NODES)
    node_ids = list(STATIC_NODES) + ids
    node_kinds = list(STATIC_NODES) + [o.kind for o in objs]
    lane_index = {name: i for i, name in enumerate(STATIC_NODES)}
    edges = [(lane_index[lane], lane_index[ROOT_NODE], int(Relation.isIn)) for lane in LANE_NODES]

    for i, o in enumerate(objs):
        if o.is_vehicle:
            for lane in assign_lanes(o, config.lane_width_ft, config.overlap_margin_ft,
                                     config.use_lane_hints):
                edges.append((n_static + i, lane_index[lane], int(Relation.isIn)))

    n = len(objs)
    if n > 1:
        xy = np.array([(o.x_ft, o.y_ft) for o in objs])
        dx = xy[None, :, 0] - xy[:, None, 0]
        dy = xy[None, :, 1] - xy[:, None, 1]
        dist = np.hypot(dx, dy)
        dcode = distance_codes(dist)
        sect = sector_index(dx, dy)
        src, dst = np.nonzero(~np.eye(n, dtype=bool))
        keep = dcode[src, dst] >= 0
        for s, d in zip(src[keep], dst[keep]):
            edges.append((n_static + s, n_static + d, int(dcode[s, d])))
        keep = (dist[src, dst] <= NEAR_THRESHOLD_FT) & (sect[src, dst] >= 0)
        for s, d in zip(src[keep], dst[keep]):
            edges.append((n_static + s, n_static + d, int(_SECTOR_REL[sect[s, d]])))

    arr = np.array(sorted(edges), dtype=np.int64).reshape(-1, 3)
    return SceneGraph(node_ids, node_kinds, arr)


def clip_to_graph_sequence(clip: ClipRecord, config: GraphConfig = GraphConfig()):
    graphs = []
    for t, frame in enumerate(clip.frames):
        try:
            graphs.append(build_scene_graph(frame, config))
        except InputError as exc:
            raise InputError(f"clip {clip.clip_id!r} frame {t}: {exc}") from exc
    return graphs
