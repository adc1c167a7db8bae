"""Scene-graph domain model, relation rules and graph construction."""
from .builder import GraphConfig, build_scene_graph, clip_to_graph_sequence
from .geometry import GeometryError, estimate_homography, invert, normalize, project_to_birdseye
from .io import (MalformedLine, detections_to_clip, graph_record, read_clips, read_detections,
                 read_graph_records, read_homography, write_clips, write_graph_records)
from .relations import assign_lanes, classify_direction, classify_distance, sector_index
from .types import (DISTANCE_THRESHOLDS_FT, LABEL_NAMES, LANE_NODES, N_RELATIONS, NODE_KINDS,
                    OBJECT_KINDS, RISKY, SAFE, STATIC_NODES, ClipRecord, InputError, ObjectState,
                    Relation, SceneGraph)

__all__ = [name for name in dir() if not name.startswith("_")]
