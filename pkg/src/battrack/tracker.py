"""Frame-by-frame tracking with a trained :class:`~battrack.model.BATNetwork`."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from battrack.config import SearchMode, TemplateStrategy, TrackerConfig
from battrack.dataio import TrackSequence, format_box
from battrack.geometry import Box7, box_from_frame, enlarge, points_in_box, to_object_frame
from battrack.model import BATNetwork
from battrack.point_ops import random_subsample_indices
from battrack.rpn import select_best

log = logging.getLogger(__name__)


class EmptyTemplateError(ValueError):
    pass


class EmptySearchError(ValueError):
    pass


def canonical_box(box: Box7) -> Box7:
    """``box`` re-centered at the origin with zero heading, size kept."""
    return Box7(0.0, 0.0, 0.0, box.w, box.l, box.h, 0.0)


def select_history(history: list, strategy: TemplateStrategy) -> list:
    strategy = TemplateStrategy(strategy)
    if strategy is TemplateStrategy.FIRST_GT:
        return history[:1]
    if strategy is TemplateStrategy.PREVIOUS:
        return history[-1:]
    if strategy is TemplateStrategy.FIRST_AND_PREVIOUS:
        return history[:1] if len(history) == 1 else [history[0], history[-1]]
    return list(history)


def make_template(history: list[tuple[np.ndarray, Box7]], strategy, n_points: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, Box7]:
    """Merge object-frame crops of the selected history entries.

    ``history[0]`` must hold the ground-truth first box; the returned box is
    that box moved to the origin with zero heading.
    """
    if not history:
        raise EmptyTemplateError("template history is empty")
    crops = []
    for pts, box in select_history(history, strategy):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        if len(pts):
            crops.append(to_object_frame(pts[points_in_box(pts, box)], box))
    merged = np.vstack(crops) if crops else np.zeros((0, 3))
    if len(merged) == 0:
        raise EmptyTemplateError("no points inside the template boxes")
    return merged[random_subsample_indices(len(merged), n_points, rng)], canonical_box(history[0][1])


def make_search_area(frame: np.ndarray, ref_box: Box7, margin: float, n_points: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, Box7]:
    """Points inside the enlarged reference box, in the reference object frame.

    The returned reference box is the transform back to the world frame.
    """
    pts = np.asarray(frame, dtype=np.float64).reshape(-1, 3)
    crop = pts[points_in_box(pts, enlarge(ref_box, margin))] if len(pts) else pts
    if len(crop) == 0:
        raise EmptySearchError("no points in the search region")
    local = to_object_frame(crop, ref_box)
    return local[random_subsample_indices(len(local), n_points, rng)], ref_box


@dataclass
class FrameOutput:
    box: Box7
    score: float
    fusion_us: int


def track_frame(net: BATNetwork, template: np.ndarray, template_box: Box7, search: np.ndarray,
                ref_box: Box7, k: int | None = None) -> FrameOutput:
    """One inference step; the output size is ``template_box``'s size."""
    t0 = time.perf_counter()
    out = net.forward(template[None], [template_box], search[None], k)
    fusion_us = int((time.perf_counter() - t0) * 1e6)
    best = select_best(out.proposals.to_list(0))
    local = Box7(best.center[0], best.center[1], best.center[2],
                 template_box.w, template_box.l, template_box.h, best.heading)
    return FrameOutput(box_from_frame(local, ref_box), best.score, fusion_us)


@dataclass
class TrackResult:
    boxes: list[Box7]
    scores: list[float] = field(default_factory=list)
    point_counts: list[int] = field(default_factory=list)
    times_us: list[int] = field(default_factory=list)
    fusion_us: list[int] = field(default_factory=list)
    seq_id: str = "0"

    def __len__(self) -> int:
        return len(self.boxes)


def track_sequence(seq: TrackSequence, cfg: TrackerConfig, net: BATNetwork) -> TrackResult:
    """Run the tracker over ``seq``; frame 0 reports the given box."""
    rng = np.random.default_rng(cfg.seed)
    gt = seq.boxes
    first_pts, first_box = seq.frames[0]
    result = TrackResult([first_box], [float("inf")], [int(points_in_box(first_pts, first_box).sum())],
                         [0], [0], seq.id)
    history = [(first_pts, first_box)]
    template = None
    for t in range(1, len(seq)):
        t0 = time.perf_counter()
        pts = seq.frames[t][0]
        prev = result.boxes[-1]
        ref = gt[t - 1] if cfg.search_mode is SearchMode.SHORT else prev
        box, score, fusion_us = prev, float("nan"), 0
        try:
            template = make_template(history, cfg.template_strategy, cfg.n_template_points, rng)
        except EmptyTemplateError:
            log.debug("sequence %s frame %d: empty template, reusing previous", seq.id, t)
        try:
            if template is None:
                raise EmptyTemplateError("no usable template yet")
            search, ref = make_search_area(pts, ref, cfg.search_margin, cfg.n_search_points, rng)
            out = track_frame(net, template[0], template[1], search, ref, cfg.k)
            box, score, fusion_us = out.box, out.score, out.fusion_us
        except (EmptySearchError, EmptyTemplateError) as exc:
            log.debug("sequence %s frame %d: holding previous box (%s)", seq.id, t, exc)
        result.boxes.append(box)
        result.scores.append(score)
        result.point_counts.append(int(points_in_box(pts, gt[t]).sum()) if len(pts) else 0)
        result.fusion_us.append(fusion_us)
        result.times_us.append(int((time.perf_counter() - t0) * 1e6))
        history.append((pts, box))
    return result


# --------------------------------------------------------------------------
# result files: "frame x y z w l h theta score time_us", one line per frame


def write_track_result(path, result: TrackResult, with_timing: bool = True) -> None:
    lines = ["# frame x y z w l h theta score time_us"]
    for i, box in enumerate(result.boxes):
        score = result.scores[i] if i < len(result.scores) else float("nan")
        t_us = result.times_us[i] if (with_timing and i < len(result.times_us)) else 0
        lines.append(f"{i} {format_box(box)} {score!r} {t_us}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def read_track_result(path) -> TrackResult:
    boxes, scores, times = [], [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        cols = body.split()
        if len(cols) != 10:
            raise ValueError(f"{path}:{lineno}: expected 10 fields, found {len(cols)}")
        if int(cols[0]) != len(boxes):
            raise ValueError(f"{path}:{lineno}: frame index {cols[0]} out of order")
        boxes.append(Box7(*[float(v) for v in cols[1:8]]))
        scores.append(float(cols[8]))
        times.append(int(cols[9]))
    return TrackResult(boxes, scores, [], times, [], Path(path).stem)
