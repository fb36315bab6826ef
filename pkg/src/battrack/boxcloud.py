"""Point-to-box representations and BoxCloud distance maps."""
from __future__ import annotations

import numpy as np

from battrack.geometry import Box7, box_points, local_box_points, to_object_frame
from battrack.tensor import ShapeError


def compute_boxcloud(points, b: Box7) -> np.ndarray:
    """Distances from every point to the 8 corners and center of ``b``, ``[N, 9]``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    q = box_points(b)
    return np.linalg.norm(pts[:, None, :] - q[None, :, :], axis=2)


def compute_offset_boxcloud(points, b: Box7) -> np.ndarray:
    """Object-frame offsets ``p - q_j`` for the nine box points, ``[N, 27]``."""
    local = to_object_frame(points, b)
    q = local_box_points(b.size)
    return (local[:, None, :] - q[None, :, :]).reshape(len(local), 27)


def pairwise_distance_map(ct, cs) -> np.ndarray:
    """``[M1, M2]`` Euclidean distances between rows of two BoxClouds."""
    ct = np.asarray(ct, dtype=np.float64)
    cs = np.asarray(cs, dtype=np.float64)
    if ct.ndim != 2 or cs.ndim != 2 or ct.shape[1] != cs.shape[1]:
        raise ShapeError(f"pairwise_distance_map: column counts differ ({ct.shape} vs {cs.shape})")
    return _column_accumulated_distance(ct[None], cs[None])[0]


def batched_distance_map(ct: np.ndarray, cs: np.ndarray) -> np.ndarray:
    """:func:`pairwise_distance_map` over a leading batch axis: ``[B, M1, M2]``."""
    if ct.shape[0] != cs.shape[0] or ct.shape[2] != cs.shape[2]:
        raise ShapeError(f"batched_distance_map: shapes {ct.shape} and {cs.shape} disagree")
    return _column_accumulated_distance(ct, cs)


def _column_accumulated_distance(ct: np.ndarray, cs: np.ndarray) -> np.ndarray:
    # Squared differences are summed one column at a time, left to right.
    # Unlike the |a|^2 + |b|^2 - 2ab expansion this has no cancellation, and
    # it rounds exactly like a scalar double loop.
    sq = np.zeros((ct.shape[0], ct.shape[1], cs.shape[1]))
    for j in range(ct.shape[2]):
        diff = ct[:, :, j, None] - cs[:, None, :, j]
        sq += diff * diff
    return np.sqrt(sq)
