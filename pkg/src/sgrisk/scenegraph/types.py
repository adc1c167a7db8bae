"""Domain types: objects, relations, scene graphs and labeled clips."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

OBJECT_KINDS = ("ego_car", "car", "motorcycle", "pedestrian", "truck", "other")
VEHICLE_KINDS = frozenset({"ego_car", "car", "motorcycle", "truck"})
LANE_NODES = ("Left_Lane", "Middle_Lane", "Right_Lane")
ROOT_NODE = "Root_Road"
STATIC_NODES = LANE_NODES + (ROOT_NODE,)
NODE_KINDS = OBJECT_KINDS + STATIC_NODES
LANE_HINTS = {"left": "Left_Lane", "middle": "Middle_Lane", "right": "Right_Lane"}

SAFE, RISKY = 0, 1
LABEL_NAMES = ("safe", "risky")


class InputError(ValueError):
    pass


class Relation(IntEnum):
    """The 14 explicit edge types; the value is the relation index."""

    Near_Collision = 0
    Super_Near = 1
    Very_Near = 2
    Near = 3
    Visible = 4
    Front_Left = 5
    Left_Front = 6
    Left_Rear = 7
    Rear_Left = 8
    Rear_Right = 9
    Right_Rear = 10
    Right_Front = 11
    Front_Right = 12
    isIn = 13


N_RELATIONS = len(Relation)
DISTANCE_RELATIONS = (Relation.Near_Collision, Relation.Super_Near, Relation.Very_Near,
                      Relation.Near, Relation.Visible)
DISTANCE_THRESHOLDS_FT = (4.0, 7.0, 10.0, 16.0, 25.0)
NEAR_THRESHOLD_FT = 16.0
# clockwise from straight ahead, 45 degrees each
DIRECTION_SECTORS = (Relation.Front_Right, Relation.Right_Front, Relation.Right_Rear,
                     Relation.Rear_Right, Relation.Rear_Left, Relation.Left_Rear,
                     Relation.Left_Front, Relation.Front_Left)


@dataclass(frozen=True)
class ObjectState:
    id: str
    kind: str
    x_ft: float
    y_ft: float
    lane_hint: Optional[str] = None

    def __post_init__(self):
        if self.kind not in OBJECT_KINDS:
            raise InputError(f"unknown object kind {self.kind!r}")
        if not (math.isfinite(self.x_ft) and math.isfinite(self.y_ft)):
            raise InputError(f"object {self.id!r} has non-finite coordinates")
        if self.lane_hint is not None and self.lane_hint not in LANE_HINTS:
            raise InputError(f"unknown lane hint {self.lane_hint!r}")

    @property
    def is_vehicle(self):
        return self.kind in VEHICLE_KINDS

    def to_json(self):
        d = {"id": self.id, "kind": self.kind, "x_ft": self.x_ft, "y_ft": self.y_ft}
        if self.lane_hint is not None:
            d["lane_hint"] = self.lane_hint
        return d

    @classmethod
    def from_json(cls, d):
        return cls(str(d["id"]), d["kind"], float(d["x_ft"]), float(d["y_ft"]), d.get("lane_hint"))


@dataclass
class SceneGraph:
    """Directed multigraph of one frame.

    ``edges`` is an (E, 3) int array of (src, dst, relation) rows, sorted.
    """

    node_ids: list
    node_kinds: list
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 3)

    @property
    def n_nodes(self):
        return len(self.node_ids)

    def edge_set(self):
        return {(int(s), int(d), int(r)) for s, d, r in self.edges}

    def to_json(self):
        return {"nodes": [[i, k] for i, k in zip(self.node_ids, self.node_kinds)],
                "edges": [[int(s), int(d), Relation(int(r)).name] for s, d, r in self.edges]}

    @classmethod
    def from_json(cls, d):
        ids = [n[0] for n in d["nodes"]]
        kinds = [n[1] for n in d["nodes"]]
        edges = [(s, t, Relation[r]) for s, t, r in d["edges"]]
        return cls(ids, kinds, np.array(edges, dtype=np.int64).reshape(-1, 3))


@dataclass
class ClipRecord:
    clip_id: str
    frames: list
    label: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.frames:
            raise InputError(f"clip {self.clip_id!r} has no frames")
        if self.label not in (SAFE, RISKY):
            raise InputError(f"clip {self.clip_id!r} label must be 0 (safe) or 1 (risky)")
        for t, frame in enumerate(self.frames):
            if not any(o.kind == "ego_car" for o in frame):
                raise InputError(f"clip {self.clip_id!r} frame {t} has no ego vehicle")

    @property
    def label_onehot(self):
        return (1, 0) if self.label == SAFE else (0, 1)

    @property
    def label_name(self):
        return LABEL_NAMES[self.label]

    def to_json(self):
        return {"clip_id": self.clip_id, "label": self.label_name,
                "frames": [[o.to_json() for o in frame] for frame in self.frames],
                "meta": self.meta}

    @classmethod
    def from_json(cls, d):
        label = d["label"]
        if label not in LABEL_NAMES:
            raise InputError(f"label must be 'safe' or 'risky', got {label!r}")
        frames = [[ObjectState.from_json(o) for o in frame] for frame in d["frames"]]
        return cls(str(d["clip_id"]), frames, LABEL_NAMES.index(label), dict(d.get("meta", {})))
