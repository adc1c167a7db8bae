"""JSON-lines readers and writers for clips, detections and graph caches."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import normalize, project_to_birdseye
from .types import ClipRecord, InputError, ObjectState, SceneGraph


class MalformedLine(InputError):
    def __init__(self, path, lineno, reason):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.lineno = lineno


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _iter_json_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(path, lineno, f"invalid JSON ({exc.msg})") from None


def write_clips(path, clips):
    with open(path, "w", encoding="utf-8") as fh:
        for clip in clips:
            fh.write(_dumps(clip.to_json()) + "\n")


def read_clips(path):
    clips = []
    for lineno, obj in _iter_json_lines(path):
        try:
            clips.append(ClipRecord.from_json(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedLine(path, lineno, f"bad clip record: {exc!r}") from None
    return clips


def read_homography(path):
    text = Path(path).read_text(encoding="utf-8").replace(",", " ")
    vals = [float(t) for t in text.split()]
    if len(vals) != 9:
        raise InputError(f"homography file {path} must hold 9 numbers, found {len(vals)}")
    return normalize(np.array(vals).reshape(3, 3))


def detections_to_clip(record, homography):
    """Project one detections record ({id, kind, u, v} per box) to a clip.

    The homography maps bottom-center pixels to ego-relative feet; the ego
    vehicle is inserted at the origin when the record does not list it.
    """
    frames = []
    for boxes in record["frames"]:
        objs = []
        for b in boxes:
            x, y = project_to_birdseye(homography, (float(b["u"]), float(b["v"])))
            if b["kind"] == "ego_car":
                x, y = 0.0, 0.0
            objs.append(ObjectState(str(b["id"]), b["kind"], float(x), float(y)))
        if not any(o.kind == "ego_car" for o in objs):
            objs.append(ObjectState("ego", "ego_car", 0.0, 0.0))
        frames.append(objs)
    return ClipRecord.from_json({"clip_id": record["clip_id"], "label": record["label"],
                                 "frames": [[o.to_json() for o in f] for f in frames],
                                 "meta": record.get("meta", {})})


def read_detections(path, homography):
    clips = []
    for lineno, obj in _iter_json_lines(path):
        try:
            clips.append(detections_to_clip(obj, homography))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedLine(path, lineno, f"bad detections record: {exc!r}") from None
    return clips


def graph_record(clip, graphs):
    return {"clip_id": clip.clip_id, "label": clip.label_name,
            "graphs": [g.to_json() for g in graphs]}


def write_graph_records(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(_dumps(rec) + "\n")


def read_graph_records(path):
    """Yields (clip_id, label, graphs) from a graph cache."""
    out = []
    for lineno, obj in _iter_json_lines(path):
        try:
            label = ("safe", "risky").index(obj["label"])
            out.append((obj["clip_id"], label, [SceneGraph.from_json(g) for g in obj["graphs"]]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedLine(path, lineno, f"bad graph record: {exc!r}") from None
    return out
