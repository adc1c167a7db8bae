"""Kinematic lane-change clip generator with a geometric risk label.

World frame: three lanes centred at x = -W, 0, +W (feet), y forward. The ego
starts in the middle lane and moves to one side lane with a smoothstep
lateral profile over the middle third of the clip. Every clip with at least
one vehicle carries a *key* vehicle in the target lane whose longitudinal
gap to the ego follows ``g + a * (t - t_c)**2``: risky clips use a gap under
the collision threshold, safe ones a gap comfortably above it. Background
traffic keeps its lane at constant relative speed and is rejection-sampled
to stay clear of the ego.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .scenegraph import (ClipRecord, GraphConfig, ObjectState, Relation, RISKY, SAFE,
                         clip_to_graph_sequence, write_clips)

log = logging.getLogger(__name__)

CLIP_FORMAT = "sgrisk.clips/1"

DOMAIN_SHIFTS = {
    "dense": dict(n_vehicles=(4, 8), n_pedestrians=(1, 3), noise_std_ft=0.5,
                  traffic_speed_delta=(-2.5, 2.5)),
}


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    n_clips: int = 100
    risky_fraction: float = 0.5
    frames_per_clip: tuple = (20, 40)
    n_vehicles: tuple = (1, 6)
    n_pedestrians: tuple = (0, 2)
    ego_speed: tuple = (3.0, 6.0)               # ft/frame
    traffic_speed_delta: tuple = (-1.5, 1.5)    # ft/frame relative to ego
    lane_width_ft: float = 12.0
    noise_std_ft: float = 0.2
    domain_shift: Optional[str] = None
    collision_phase: str = "any"                # "any" or "late" (final third)

    def __post_init__(self):
        for name in ("frames_per_clip", "n_vehicles", "n_pedestrians", "ego_speed",
                     "traffic_speed_delta"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        def rng_ok(name, allow_negative=False):
            lo, hi = getattr(self, name)
            if lo > hi or (not allow_negative and lo < 0):
                raise ValueError(f"{name}: invalid range ({lo}, {hi})")

        for name in ("frames_per_clip", "n_vehicles", "n_pedestrians", "ego_speed"):
            rng_ok(name)
        rng_ok("traffic_speed_delta", allow_negative=True)
        if self.frames_per_clip[0] < 1:
            raise ValueError("frames_per_clip must allow at least one frame")
        if not 0.0 <= self.risky_fraction <= 1.0:
            raise ValueError(f"risky_fraction must be in [0, 1], got {self.risky_fraction}")
        if self.n_clips < 0:
            raise ValueError("n_clips must be nonnegative")
        if self.lane_width_ft <= 0 or self.noise_std_ft < 0:
            raise ValueError("lane_width_ft must be positive and noise_std_ft nonnegative")
        if self.domain_shift is not None and self.domain_shift not in DOMAIN_SHIFTS:
            raise ValueError(f"unknown domain_shift {self.domain_shift!r}")
        if self.collision_phase not in ("any", "late"):
            raise ValueError(f"collision_phase must be 'any' or 'late'")

    def resolved(self):
        """Spec with the domain-shift preset folded in."""
        if self.domain_shift is None:
            return self
        return replace(self, domain_shift=None, **DOMAIN_SHIFTS[self.domain_shift])

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class RiskLabelRule:
    collision_threshold_ft: float = 4.0
    window: str = "maneuver"    # "maneuver": lane-change start to clip end; "clip": all frames

    def __post_init__(self):
        if self.collision_threshold_ft <= 0:
            raise ValueError("collision threshold must be positive")
        if self.window not in ("maneuver", "clip"):
            raise ValueError(f"unknown window {self.window!r}")


def label_clip(clip: ClipRecord, rule: RiskLabelRule = RiskLabelRule()) -> int:
    """Risky iff some ego-to-vehicle distance in the window is below the threshold."""
    start = 0
    if rule.window == "maneuver" and "lane_change" in clip.meta:
        start = int(clip.meta["lane_change"][0])
    for frame in clip.frames[start:]:
        ego = next(o for o in frame if o.kind == "ego_car")
        for o in frame:
            if o is ego or not o.is_vehicle:
                continue
            if np.hypot(o.x_ft - ego.x_ft, o.y_ft - ego.y_ft) < rule.collision_threshold_ft:
                return RISKY
    return SAFE


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _lane_hint(lane_idx, ego_lane_idx):
    d = lane_idx - ego_lane_idx
    return "left" if d < 0 else ("right" if d > 0 else "middle")


def _uniform(rng, bounds):
    lo, hi = bounds
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _integer(rng, bounds):
    return int(rng.integers(bounds[0], bounds[1] + 1))


def generate_clip(spec: ScenarioSpec, rng, risky: Optional[bool] = None, clip_id="clip") -> ClipRecord:
    spec = spec.resolved()
    if risky is None:
        risky = bool(rng.random() < spec.risky_fraction)
    W = spec.lane_width_ft
    T = _integer(rng, spec.frames_per_clip)
    t = np.arange(T, dtype=float)
    t0, t1 = T // 3, max(T // 3 + 1, (2 * T) // 3)
    side = 1 if rng.random() < 0.5 else -1
    ego_x = side * W * _smoothstep((t - t0) / (t1 - t0))
    ego_lane = np.rint(ego_x / W).astype(int)

    n_veh = _integer(rng, spec.n_vehicles)
    if risky and n_veh == 0:
        n_veh = 1
    tracks = []  # (id, kind, world_lane_or_None, world_x(t), rel_y(t))

    meta = {"lane_change": [int(t0), int(t1)], "direction": "right" if side > 0 else "left",
            "constructed_label": "risky" if risky else "safe"}
    if n_veh > 0:
        lateral_gap = np.abs(side * W - ego_x)
        cand = np.nonzero((lateral_gap <= 1.0) & (t >= t0))[0]
        if spec.collision_phase == "late":
            cand = cand[cand >= (2 * T) // 3]
        if cand.size == 0:
            cand = np.array([T - 1])
        tc = int(rng.choice(cand))
        gap = _uniform(rng, (1.0, 3.0) if risky else (5.5, 14.0))
        curv = _uniform(rng, (0.15, 0.6))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        key_id = "car_00"
        tracks.append((key_id, "car", side, np.full(T, side * W), sign * (gap + curv * (t - tc) ** 2)))
        meta.update(key_vehicle_id=key_id, closest_frame=tc, key_gap_ft=round(gap, 4))

    for i in range(1, n_veh):
        kind = rng.choice(["car", "car", "car", "truck", "motorcycle"])
        for _ in range(50):
            lane = int(rng.integers(-1, 2))
            y = rng.uniform(-60.0, 60.0) + _uniform(rng, spec.traffic_speed_delta) * t
            x = np.full(T, lane * W)
            if np.min(np.hypot(x - ego_x, y)) >= 6.0:
                tracks.append((f"{kind}_{i:02d}", str(kind), lane, x, y))
                break

    for j in range(_integer(rng, spec.n_pedestrians)):
        ps = 1 if rng.random() < 0.5 else -1
        x = np.full(T, ps * (1.5 * W + 4.0 + rng.uniform(0.0, 6.0)))
        y = rng.uniform(-40.0, 80.0) + (rng.uniform(-0.5, 0.5) - _uniform(rng, spec.ego_speed)) * t
        tracks.append((f"ped_{j:02d}", "pedestrian", None, x, y))

    noise = spec.noise_std_ft
    frames = []
    for k in range(T):
        frame = [ObjectState("ego", "ego_car", 0.0, 0.0, "middle")]
        for oid, kind, lane, x, y in tracks:
            jx, jy = (rng.normal(0.0, noise, 2) if noise > 0 else (0.0, 0.0))
            hint = None if lane is None else _lane_hint(lane, ego_lane[k])
            frame.append(ObjectState(oid, kind, round(float(x[k] - ego_x[k] + jx), 4),
                                     round(float(y[k] + jy), 4), hint))
        frames.append(frame)
    return ClipRecord(clip_id, frames, RISKY if risky else SAFE, meta)


def has_ego_near_collision(clip: ClipRecord, config: GraphConfig = GraphConfig()) -> bool:
    for g in clip_to_graph_sequence(clip, config):
        ego = g.node_ids.index("ego")
        e = g.edges
        hit = (e[:, 2] == int(Relation.Near_Collision)) & ((e[:, 0] == ego) | (e[:, 1] == ego))
        if hit.any():
            return True
    return False


def _make_clip(args):
    spec, index, risky, rule = args
    for attempt in range(10):
        rng = np.random.default_rng([spec.seed, index, attempt])
        clip = generate_clip(spec, rng, risky=risky, clip_id=f"clip_{index:05d}")
        target = RISKY if risky else SAFE
        if label_clip(clip, rule) == target and has_ego_near_collision(clip) == (target == RISKY):
            clip.meta["attempts"] = attempt + 1
            return clip
    raise GenerationError(f"clip {index}: construction disagreed with its label 10 times")


def generate_dataset(spec: ScenarioSpec, rule: RiskLabelRule = RiskLabelRule(), jobs: int = 1):
    """Returns (clips, manifest). Clip ``i`` depends only on (seed, i)."""
    spec.validate()
    n = spec.n_clips
    n_risky = int(round(n * spec.risky_fraction))
    if n_risky and spec.resolved().n_vehicles[1] == 0:
        raise GenerationError("risky clips need at least one vehicle")
    labels = np.array([True] * n_risky + [False] * (n - n_risky))
    np.random.default_rng([spec.seed, 2**31 - 1]).shuffle(labels)
    tasks = [(spec, i, bool(labels[i]), rule) for i in range(n)]
    if jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            clips = list(ex.map(_make_clip, tasks, chunksize=max(1, n // (4 * jobs))))
    else:
        clips = [_make_clip(task) for task in tasks]
    achieved = n_risky / n if n else 0.0
    if n and abs(achieved - spec.risky_fraction) > 0.02 + 0.5 / n:
        raise GenerationError(f"risky fraction {achieved:.3f} misses target {spec.risky_fraction}")
    manifest = {"format": CLIP_FORMAT, "seed": spec.seed, "spec": spec.to_dict(),
                "label_rule": asdict(rule), "n_clips": n, "n_risky": n_risky,
                "n_safe": n - n_risky, "risky_fraction": achieved}
    log.info("generated %d clips (%d risky)", n, n_risky)
    return clips, manifest


def write_dataset(path, clips, manifest):
    write_clips(path, clips)
    with open(str(path) + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
