"""One-pass evaluation: Success / Precision, sparsity bins, BoxCloud MSE.

Success is the area under the IoU-threshold curve and Precision the
normalized area under the center-distance curve on [0, 2] m.  Both areas are
computed in closed form from per-frame values; frame 0 (the given box) is
not scored.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from battrack.dataio import TrackSequence
from battrack.geometry import Box7, center_distance, iou_3d
from battrack.tracker import TrackResult

PRECISION_RANGE = 2.0
DEFAULT_BIN_EDGES = (10, 30, 50, 100, 150)
DEFAULT_MSE_EDGES = (0.05, 0.08, 0.1, 0.2, 0.5, 1.0)


def bev_iou(a: Box7, b: Box7) -> float:
    """Footprint IoU (both boxes flattened to the same height)."""
    return iou_3d(Box7(a.x, a.y, 0.0, a.w, a.l, 1.0, a.heading), Box7(b.x, b.y, 0.0, b.w, b.l, 1.0, b.heading))


def _boxes(x) -> list[Box7]:
    if isinstance(x, TrackResult):
        return x.boxes
    if isinstance(x, TrackSequence):
        return x.boxes
    return list(x)


def _check(pred, gt) -> tuple[list[Box7], list[Box7]]:
    p, g = _boxes(pred), _boxes(gt)
    if len(p) != len(g):
        raise ValueError(f"frame count mismatch: {len(p)} predictions vs {len(g)} ground-truth boxes")
    return p, g


def frame_overlaps(pred, gt, iou: str = "3d") -> np.ndarray:
    p, g = _check(pred, gt)
    fn = iou_3d if iou == "3d" else bev_iou
    return np.array([fn(a, b) for a, b in zip(p[1:], g[1:])])


def frame_distances(pred, gt) -> np.ndarray:
    p, g = _check(pred, gt)
    return np.array([center_distance(a, b) for a, b in zip(p[1:], g[1:])])


def success_from_overlaps(u: np.ndarray) -> float:
    return 100.0 if len(u) == 0 else 100.0 * float(np.mean(u))


def precision_from_distances(d: np.ndarray) -> float:
    if len(d) == 0:
        return 100.0
    return 100.0 * float(np.mean(np.clip((PRECISION_RANGE - d) / PRECISION_RANGE, 0.0, 1.0)))


def success_score(results, gt, iou: str = "3d") -> float:
    return success_from_overlaps(frame_overlaps(results, gt, iou))


def precision_score(results, gt) -> float:
    return precision_from_distances(frame_distances(results, gt))


def success_curve(overlaps: np.ndarray, n: int = 101) -> tuple[np.ndarray, np.ndarray]:
    tau = np.linspace(0.0, 1.0, n)
    frac = (overlaps[None, :] > tau[:, None]).mean(axis=1) if len(overlaps) else np.ones(n)
    return tau, frac


def precision_curve(distances: np.ndarray, n: int = 101) -> tuple[np.ndarray, np.ndarray]:
    tau = np.linspace(0.0, PRECISION_RANGE, n)
    frac = (distances[None, :] < tau[:, None]).mean(axis=1) if len(distances) else np.ones(n)
    return tau, frac


@dataclass
class OPESummary:
    success: float
    precision: float
    frames: int
    overlaps: np.ndarray
    distances: np.ndarray


def ope(results: Sequence, gts: Sequence, iou: str = "3d") -> OPESummary:
    """Frame-weighted Success/Precision over several sequences."""
    if len(results) != len(gts):
        raise ValueError(f"{len(results)} results for {len(gts)} sequences")
    u = [frame_overlaps(r, g, iou) for r, g in zip(results, gts)]
    d = [frame_distances(r, g) for r, g in zip(results, gts)]
    u = np.concatenate(u) if u else np.zeros(0)
    d = np.concatenate(d) if d else np.zeros(0)
    return OPESummary(success_from_overlaps(u), precision_from_distances(d), len(u), u, d)


@dataclass
class SparsityRow:
    label: str
    lo: float
    hi: float
    sequences: int
    success: float | None  # None marks an empty bin


def sparsity_report(results_by_seq: Sequence, gt_by_seq: Sequence[TrackSequence],
                    bin_edges=DEFAULT_BIN_EDGES, iou: str = "3d") -> list[SparsityRow]:
    """Mean per-sequence Success grouped by first-frame in-box point count."""
    edges = [float(e) for e in bin_edges]
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"bin edges must ascend, got {edges}")
    bounds = [0.0] + edges + [float("inf")]
    buckets: list[list[float]] = [[] for _ in range(len(bounds) - 1)]
    for res, seq in zip(results_by_seq, gt_by_seq):
        n = seq.first_frame_points()
        i = int(np.searchsorted(edges, n, side="right"))
        buckets[i].append(success_score(res, seq, iou))
    rows = []
    for (lo, hi), vals in zip(zip(bounds, bounds[1:]), buckets):
        label = f"[{lo:g},{hi:g})" if np.isfinite(hi) else f">={lo:g}"
        rows.append(SparsityRow(label, lo, hi, len(vals), float(np.mean(vals)) if vals else None))
    return rows


@dataclass
class MSEHistogram:
    edges: tuple
    counts: np.ndarray
    values: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def median(self) -> float:
        return float(np.median(self.values)) if len(self.values) else float("nan")


def mse_histogram(values, edges=DEFAULT_MSE_EDGES) -> MSEHistogram:
    values = np.asarray(values, dtype=np.float64)
    bounds = np.concatenate([[0.0], np.asarray(edges, dtype=np.float64), [np.inf]])
    counts, _ = np.histogram(values, bins=bounds)
    return MSEHistogram(tuple(edges), counts, values)


def boxcloud_mse_report(net, sequences: Sequence[TrackSequence], edges=DEFAULT_MSE_EDGES,
                        seed: int = 0) -> MSEHistogram:
    """Per-point MSE of predicted box coordinates on in-box search seeds.

    Search areas are centered on the ground-truth box of every frame after
    the first; templates come from the first and previous ground truth.
    """
    from battrack.config import TemplateStrategy
    from battrack.geometry import box_to_frame
    from battrack.tracker import EmptySearchError, EmptyTemplateError, make_search_area, make_template

    rng = np.random.default_rng(seed)
    cfg = net.cfg
    values = []
    for seq in sequences:
        for t in range(1, len(seq)):
            pts, gt = seq.frames[t]
            try:
                tpl, tpl_box = make_template([seq.frames[0], seq.frames[t - 1]], TemplateStrategy.FIRST_AND_PREVIOUS,
                                             cfg.n_template_points, rng)
                search, ref = make_search_area(pts, gt, cfg.search_margin, cfg.n_search_points, rng)
            except (EmptySearchError, EmptyTemplateError):
                continue
            out = net.forward(tpl[None], [tpl_box], search[None])
            local_gt = box_to_frame(gt, ref)
            true_bc, mask = net.boxcloud_targets(out, [local_gt])
            pred = out.fused.predicted_boxcloud.data
            sel = mask > 0
            values.extend(np.mean((pred[sel] - true_bc[sel]) ** 2, axis=1).tolist())
    return mse_histogram(values, edges)


# --------------------------------------------------------------------------
# report files


def write_metric_table(path, rows: list[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})


def write_curve(path, thresholds: np.ndarray, fractions: np.ndarray) -> None:
    lines = ["# threshold fraction"] + [f"{t:.6f} {f:.6f}" for t, f in zip(thresholds, fractions)]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def write_sparsity_table(path, rows: list[SparsityRow]) -> None:
    write_metric_table(path, [
        {"bin": r.label, "sequences": r.sequences, "success": "absent" if r.success is None else r.success}
        for r in rows
    ])
