"""Sequences on disk: velodyne-style scans and the annotation text schema.

Dataset directory layout::

    <root>/annotations.txt           seq_id frame_idx x y z w l h theta
    <root>/velodyne/<seq_id>/<frame_idx:06d>.bin

Scans are little-endian float32 records ``(x, y, z, intensity)``.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from battrack.geometry import Box7, points_in_box


class FormatError(ValueError):
    pass


@dataclass
class TrackSequence:
    frames: list[tuple[np.ndarray, Box7]]
    category: str = "object"
    id: str = "0"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.frames:
            raise ValueError(f"sequence {self.id!r} has no frames")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def boxes(self) -> list[Box7]:
        return [b for _, b in self.frames]

    @property
    def clouds(self) -> list[np.ndarray]:
        return [p for p, _ in self.frames]

    def first_frame_points(self) -> int:
        pts, box = self.frames[0]
        return int(points_in_box(pts, box).sum()) if len(pts) else 0


def read_velodyne_scan(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise FormatError(f"{path}: {len(raw)} bytes is not a multiple of 16")
    rec = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return rec[:, :3].astype(np.float64)


def write_velodyne_scan(path, points, intensity=None) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rec = np.zeros((len(pts), 4), dtype="<f4")
    rec[:, :3] = pts
    if intensity is not None:
        rec[:, 3] = intensity
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(rec.tobytes())


def parse_annotations(text: str, source: str = "<string>") -> dict[str, list[tuple[int, Box7]]]:
    tracks: dict[str, list[tuple[int, Box7]]] = defaultdict(list)
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        cols = body.split()
        if len(cols) != 9:
            raise FormatError(f"{source}:{lineno}: expected 9 fields, found {len(cols)}")
        try:
            frame = int(cols[1])
            vals = [float(v) for v in cols[2:]]
        except ValueError as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from exc
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(f"{source}:{lineno}: non-finite value")
        try:
            box = Box7(*vals)
        except ValueError as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from exc
        tracks[cols[0]].append((frame, box))
    for seq in tracks.values():
        seq.sort(key=lambda fb: fb[0])
    return dict(tracks)


def read_annotations(path) -> list[TrackSequence]:
    """Annotation file -> box-only sequences (point clouds left empty)."""
    tracks = parse_annotations(Path(path).read_text(), str(path))
    out = []
    for seq_id in sorted(tracks):
        frames = [(np.zeros((0, 3)), box) for _, box in tracks[seq_id]]
        out.append(TrackSequence(frames, id=seq_id, meta={"frame_ids": [f for f, _ in tracks[seq_id]]}))
    return out


def format_box(box: Box7) -> str:
    return " ".join(repr(float(v)) for v in box.to_array())


def write_annotations(path, sequences: list[TrackSequence]) -> None:
    lines = ["# seq_id frame_idx x y z w l h theta"]
    for seq in sequences:
        ids = seq.meta.get("frame_ids", list(range(len(seq))))
        for fid, (_, box) in zip(ids, seq.frames):
            lines.append(f"{seq.id} {fid} {format_box(box)}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def save_dataset(root, sequences: list[TrackSequence]) -> None:
    root = Path(root)
    for seq in sequences:
        ids = seq.meta.get("frame_ids", list(range(len(seq))))
        for fid, (pts, _) in zip(ids, seq.frames):
            write_velodyne_scan(root / "velodyne" / seq.id / f"{fid:06d}.bin", pts)
    write_annotations(root / "annotations.txt", sequences)


def load_dataset(root) -> list[TrackSequence]:
    root = Path(root)
    ann = root / "annotations.txt"
    if not ann.exists():
        raise FormatError(f"{root}: no annotations.txt")
    out = []
    for seq in read_annotations(ann):
        frames = []
        for fid, (_, box) in zip(seq.meta["frame_ids"], seq.frames):
            scan = root / "velodyne" / seq.id / f"{fid:06d}.bin"
            if not scan.exists():
                raise FormatError(f"{scan}: missing scan for sequence {seq.id} frame {fid}")
            frames.append((read_velodyne_scan(scan), box))
        out.append(TrackSequence(frames, seq.category, seq.id, seq.meta))
    return out


def evaluable(sequences: list[TrackSequence]) -> list[TrackSequence]:
    """Drop tracklets whose first box holds no points."""
    return [s for s in sequences if s.first_frame_points() > 0]


def split_train_test(sequences: list[TrackSequence], ratio: float, seed: int = 0):
    """Deterministic split by sequence id; ``ratio`` is the training share."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    ordered = sorted(sequences, key=lambda s: s.id)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    n_train = int(round(ratio * len(ordered)))
    train = [ordered[i] for i in sorted(perm[:n_train])]
    test = [ordered[i] for i in sorted(perm[n_train:])]
    return train, test


def kitti_label_to_box7(h, w, l, x, y, z, ry, cam_to_velo: np.ndarray) -> Box7:  # noqa: E741
    """Convert one KITTI tracking label (camera frame) into a LiDAR-frame Box7.

    KITTI places ``(x, y, z)`` at the bottom-face center in rectified camera
    coordinates, with the object length along camera x at ``ry = 0``.  The
    box center is lifted by ``h/2`` (camera y points down), mapped through
    ``cam_to_velo`` (4x4).  The LiDAR yaw of the length axis is
    ``-ry - pi/2``; with length along local y the heading is ``-ry - pi``.
    """
    c = np.array([x, y - h / 2.0, z, 1.0]) @ np.asarray(cam_to_velo).T
    return Box7(c[0], c[1], c[2], w, l, h, -ry - math.pi)
