"""Synthetic LiDAR-like tracking sequences.

Objects are parametric point shells (cuboid, L-shaped body, cylinder) with
outward normals.  Each frame places the target and distractors on their
trajectories, then simulates the sensor: back-facing samples are dropped,
returns are binned by azimuth/elevation keeping only the nearest per bin
(which also occludes objects behind objects), far returns are cut, and the
survivors go through random dropout.

A scene spec is a YAML mapping, for example::

    id: seq0
    frames: 20
    seed: 3
    target: {kind: cuboid, size: [1.6, 3.6, 1.5], points: 800}
    trajectory: {waypoints: [[8, -3], [9, 0], [9.5, 3]]}
    sensor: {origin: [0, 0, 1.8], angular_resolution_deg: 0.25,
             max_range: 60, dropout: 0.0}
    ground: {density: 1.0, margin: 4.0}
    distractors:
      - shape: {kind: cuboid, size: [2.0, 5.0, 2.0], points: 800}
        trajectory: {waypoints: [[12, -3], [12.5, 3]]}
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.interpolate import CubicSpline

from battrack.dataio import TrackSequence
from battrack.geometry import Box7, rotation_z

SHAPES = ("cuboid", "lshape", "cylinder")
CLEARANCE = 0.1  # box bottom height above the ground plane
INSET = 0.98  # surface samples sit just inside the box


@dataclass
class ShapeSpec:
    kind: str = "cuboid"
    size: tuple = (1.6, 3.6, 1.5)
    points: int = 800

    def __post_init__(self):
        if self.kind not in SHAPES:
            raise ValueError(f"unknown shape kind {self.kind!r}; expected one of {SHAPES}")
        self.size = tuple(float(s) for s in self.size)
        if len(self.size) != 3 or min(self.size) <= 0:
            raise ValueError(f"shape size must be three positive numbers, got {self.size}")


@dataclass
class TrajectorySpec:
    waypoints: list = field(default_factory=lambda: [[8.0, 0.0], [8.0, 3.0]])
    heading_offset: float = 0.0

    def __post_init__(self):
        self.waypoints = [[float(v) for v in w] for w in self.waypoints]
        if not self.waypoints or any(len(w) != 2 for w in self.waypoints):
            raise ValueError("trajectory waypoints must be [x, y] pairs")


@dataclass
class SensorSpec:
    origin: tuple = (0.0, 0.0, 1.8)
    angular_resolution_deg: float = 0.25
    max_range: float = 60.0
    dropout: float = 0.0

    def __post_init__(self):
        self.origin = tuple(float(v) for v in self.origin)
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError(f"dropout must lie in [0, 1], got {self.dropout}")
        if self.angular_resolution_deg <= 0 or self.max_range <= 0:
            raise ValueError("angular resolution and max range must be positive")


@dataclass
class GroundSpec:
    density: float = 1.0  # samples per square meter before sensor thinning
    margin: float = 4.0


@dataclass
class DistractorSpec:
    shape: ShapeSpec = field(default_factory=ShapeSpec)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)


@dataclass
class SceneSpec:
    target: ShapeSpec = field(default_factory=ShapeSpec)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    sensor: SensorSpec = field(default_factory=SensorSpec)
    ground: GroundSpec = field(default_factory=GroundSpec)
    distractors: list = field(default_factory=list)
    frames: int = 20
    seed: int = 0
    id: str = "0"
    category: str = ""

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        if not self.category:
            self.category = self.target.kind

    @classmethod
    def from_dict(cls, raw: dict) -> "SceneSpec":
        raw = dict(raw)
        known = {"target", "trajectory", "sensor", "ground", "distractors", "frames", "seed", "id", "category"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        return cls(
            target=ShapeSpec(**raw.get("target", {})),
            trajectory=TrajectorySpec(**raw.get("trajectory", {})),
            sensor=SensorSpec(**raw.get("sensor", {})),
            ground=GroundSpec(**raw.get("ground", {})),
            distractors=[
                DistractorSpec(ShapeSpec(**d.get("shape", {})), TrajectorySpec(**d.get("trajectory", {})))
                for d in raw.get("distractors", []) or []
            ],
            frames=int(raw.get("frames", 20)),
            seed=int(raw.get("seed", 0)),
            id=str(raw.get("id", "0")),
            category=str(raw.get("category", "")),
        )

    def to_dict(self) -> dict:
        def shape(s):
            return {"kind": s.kind, "size": list(s.size), "points": s.points}

        def traj(t):
            return {"waypoints": t.waypoints, "heading_offset": t.heading_offset}

        return {
            "id": self.id,
            "category": self.category,
            "frames": self.frames,
            "seed": self.seed,
            "target": shape(self.target),
            "trajectory": traj(self.trajectory),
            "sensor": {
                "origin": list(self.sensor.origin),
                "angular_resolution_deg": self.sensor.angular_resolution_deg,
                "max_range": self.sensor.max_range,
                "dropout": self.sensor.dropout,
            },
            "ground": {"density": self.ground.density, "margin": self.ground.margin},
            "distractors": [{"shape": shape(d.shape), "trajectory": traj(d.trajectory)} for d in self.distractors],
        }


def load_scene_specs(path) -> list[SceneSpec]:
    """A spec file holds one scene mapping or a ``scenes:`` list of them."""
    raw = yaml.safe_load(Path(path).read_text())
    if isinstance(raw, dict) and "scenes" in raw:
        return [SceneSpec.from_dict(s) for s in raw["scenes"]]
    if isinstance(raw, dict):
        return [SceneSpec.from_dict(raw)]
    raise ValueError(f"{path}: expected a scene mapping or a 'scenes' list")


def dump_scene_specs(path, specs: list[SceneSpec]) -> None:
    Path(path).write_text(yaml.safe_dump({"scenes": [s.to_dict() for s in specs]}, sort_keys=False))


# --------------------------------------------------------------------------
# shape sampling (object frame, outward normals)


def _sample_cuboid(half: np.ndarray, n: int, rng: np.random.Generator):
    areas = np.array([half[1] * half[2]] * 2 + [half[0] * half[2]] * 2 + [half[0] * half[1]] * 2)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 3))
    pts = uv * half
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    normals = np.zeros((n, 3))
    normals[np.arange(n), axis] = sign
    return pts, normals


def _inside(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.all((points > lo + 1e-9) & (points < hi - 1e-9), axis=1)


def sample_shape(shape: ShapeSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Surface samples and outward normals in the object frame."""
    half = 0.5 * np.array(shape.size) * INSET
    n = shape.points
    if shape.kind == "cuboid":
        return _sample_cuboid(half, n, rng)
    if shape.kind == "cylinder":
        r = min(half[0], half[1])
        side_area = 2 * math.pi * r * 2 * half[2]
        cap_area = math.pi * r * r
        n_side = int(round(n * side_area / (side_area + 2 * cap_area)))
        phi = rng.uniform(0, 2 * math.pi, n_side)
        z = rng.uniform(-half[2], half[2], n_side)
        side = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        side_n = np.stack([np.cos(phi), np.sin(phi), np.zeros(n_side)], axis=1)
        n_cap = n - n_side
        rad = r * np.sqrt(rng.uniform(0, 1, n_cap))
        ang = rng.uniform(0, 2 * math.pi, n_cap)
        top = rng.uniform(size=n_cap) < 0.5
        cap = np.stack([rad * np.cos(ang), rad * np.sin(ang), np.where(top, half[2], -half[2])], axis=1)
        cap_n = np.zeros((n_cap, 3))
        cap_n[:, 2] = np.where(top, 1.0, -1.0)
        return np.vstack([side, cap]), np.vstack([side_n, cap_n])
    # L-shaped body: full-length lower block plus a full-height front block.
    lo = -half
    split_z = lo[2] + half[2]  # lower block is half the height
    split_y = half[1] - 0.8 * half[1]  # front block covers the front 40%
    lower = (np.array([lo[0], lo[1], lo[2]]), np.array([half[0], half[1], split_z]))
    front = (np.array([lo[0], split_y, lo[2]]), np.array([half[0], half[1], half[2]]))
    pts, nrm = [], []
    for a, b in (lower, front):
        c = 0.5 * (a + b)
        p, q = _sample_cuboid(0.5 * (b - a), n, rng)
        pts.append(p + c)
        nrm.append(q)
    p_low, p_front = pts
    keep_low = ~_inside(p_low, *front)
    keep_front = ~_inside(p_front, *lower)
    all_p = np.vstack([p_low[keep_low], p_front[keep_front]])
    all_n = np.vstack([nrm[0][keep_low], nrm[1][keep_front]])
    idx = rng.permutation(len(all_p))[:n]
    return all_p[idx], all_n[idx]


# --------------------------------------------------------------------------
# trajectories and sensor


def trajectory_poses(traj: TrajectorySpec, frames: int, height: float) -> list[tuple[np.ndarray, float]]:
    """Per-frame ``(center, heading)``; heading follows the path tangent."""
    wp = np.array(traj.waypoints, dtype=np.float64)
    z = CLEARANCE + 0.5 * height
    if len(wp) == 1 or frames == 1:
        heading = traj.heading_offset
        if len(wp) > 1:
            d = wp[1] - wp[0]
            heading += math.atan2(-d[0], d[1])
        return [(np.array([wp[0, 0], wp[0, 1], z]), heading)] * frames
    knots = np.linspace(0.0, 1.0, len(wp))
    spline = CubicSpline(knots, wp, bc_type="natural") if len(wp) > 2 else None
    t = np.linspace(0.0, 1.0, frames)
    if spline is None:
        xy = wp[0] + t[:, None] * (wp[1] - wp[0])
        dxy = np.repeat((wp[1] - wp[0])[None], frames, axis=0)
    else:
        xy, dxy = spline(t), spline(t, 1)
    return [
        (np.array([xy[i, 0], xy[i, 1], z]), math.atan2(-dxy[i, 0], dxy[i, 1]) + traj.heading_offset)
        for i in range(frames)
    ]


def sensor_returns(points: np.ndarray, sensor: SensorSpec) -> np.ndarray:
    """Indices of points that survive range cut and nearest-per-bin occlusion."""
    rel = points - np.asarray(sensor.origin)
    rng_ = np.linalg.norm(rel, axis=1)
    ok = np.flatnonzero((rng_ <= sensor.max_range) & (rng_ > 1e-6))
    if ok.size == 0:
        return ok
    rel, rng_ = rel[ok], rng_[ok]
    res = math.radians(sensor.angular_resolution_deg)
    az = np.floor(np.arctan2(rel[:, 1], rel[:, 0]) / res).astype(np.int64)
    el = np.floor(np.arcsin(np.clip(rel[:, 2] / rng_, -1, 1)) / res).astype(np.int64)
    order = np.lexsort((rng_, el, az))
    az_s, el_s = az[order], el[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = (az_s[1:] != az_s[:-1]) | (el_s[1:] != el_s[:-1])
    return np.sort(ok[order[first]])


def generate_scene(spec: SceneSpec) -> TrackSequence:
    rng = np.random.default_rng(spec.seed)
    objects = [(spec.target, spec.trajectory)] + [(d.shape, d.trajectory) for d in spec.distractors]
    samples = [sample_shape(shape, rng) for shape, _ in objects]
    poses = [trajectory_poses(traj, spec.frames, shape.size[2]) for shape, traj in objects]

    all_xy = np.vstack([np.array(traj.waypoints) for _, traj in objects])
    lo = all_xy.min(axis=0) - spec.ground.margin
    hi = all_xy.max(axis=0) + spec.ground.margin
    n_ground = int(spec.ground.density * float(np.prod(hi - lo)))
    ground = np.column_stack([rng.uniform(lo[0], hi[0], n_ground), rng.uniform(lo[1], hi[1], n_ground),
                              np.zeros(n_ground)])
    origin = np.asarray(spec.sensor.origin)

    frames = []
    for f in range(spec.frames):
        chunks = []
        for (pts, nrm), pose in zip(samples, poses):
            center, heading = pose[f]
            rot = rotation_z(heading)
            world = pts @ rot.T + center
            facing = np.sum((nrm @ rot.T) * (origin - world), axis=1) > 0
            chunks.append(world[facing])
        chunks.append(ground)
        cloud = np.vstack(chunks)
        cloud = cloud[sensor_returns(cloud, spec.sensor)]
        if spec.sensor.dropout > 0:
            cloud = cloud[rng.uniform(size=len(cloud)) >= spec.sensor.dropout]
        center, heading = poses[0][f]
        box = Box7(center[0], center[1], center[2], *spec.target.size, heading)
        frames.append((cloud, box))
    return TrackSequence(frames, spec.category, spec.id, {"frame_ids": list(range(spec.frames))})


def random_scene_specs(count: int, seed: int = 0, frames: int = 20, regime: str = "dense",
                       distractors: int = 0, id_prefix: str = "seq") -> list[SceneSpec]:
    """Draw ``count`` scene specs with varied shapes, sizes and paths.

    ``regime`` picks the target surface density: ``dense`` (~300 visible
    target points) or ``sparse`` (tens of points, plus some dropout).
    """
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(count):
        kind = SHAPES[int(rng.integers(len(SHAPES)))]
        size = (float(rng.uniform(1.4, 2.0)), float(rng.uniform(3.0, 4.5)), float(rng.uniform(1.3, 1.8)))
        if kind == "cylinder":
            size = (size[0], size[0], size[2])
        if regime == "dense":
            n_pts, dropout = 700, 0.0
        elif regime == "sparse":
            n_pts, dropout = int(rng.integers(60, 160)), 0.1
        else:
            raise ValueError(f"unknown regime {regime!r}")
        start_r = rng.uniform(7.0, 13.0)
        start_a = rng.uniform(-math.pi, math.pi)
        start = np.array([start_r * math.cos(start_a), start_r * math.sin(start_a)])
        direction = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(0.08, 0.22)  # meters per frame
        turn = rng.uniform(-0.5, 0.5)
        length = speed * (frames - 1)
        waypoints = []
        for t in (0.0, 0.5, 1.0):
            a = direction + turn * t
            waypoints.append((start + length * t * np.array([math.cos(a), math.sin(a)])).tolist())
        spec_d = []
        for _ in range(distractors):
            dsize = (float(rng.uniform(1.2, 2.4)), float(rng.uniform(2.5, 5.5)), float(rng.uniform(1.2, 2.2)))
            lateral = rng.choice([-1.0, 1.0]) * rng.uniform(2.8, 3.8)
            along = rng.uniform(-2.0, 2.0)
            normal = np.array([-math.sin(direction), math.cos(direction)])
            tangent = np.array([math.cos(direction), math.sin(direction)])
            shift = lateral * normal + along * tangent
            dpath = [(np.array(w) + shift).tolist() for w in waypoints]
            dkind = SHAPES[int(rng.integers(len(SHAPES)))]
            if dkind == "cylinder":
                dsize = (dsize[0], dsize[0], dsize[2])
            spec_d.append(DistractorSpec(ShapeSpec(dkind, dsize, n_pts), TrajectorySpec(dpath)))
        specs.append(SceneSpec(
            target=ShapeSpec(kind, size, n_pts),
            trajectory=TrajectorySpec(waypoints),
            sensor=SensorSpec(dropout=dropout),
            ground=GroundSpec(density=1.0, margin=4.0),
            distractors=spec_d,
            frames=frames,
            seed=int(rng.integers(2**31)),
            id=f"{id_prefix}{i:03d}",
        ))
    return specs
