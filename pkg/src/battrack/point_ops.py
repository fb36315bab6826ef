"""Sampling and grouping on point sets.

Everything here is brute force over dense distance matrices, which is fast
enough at a few thousand points.  Functions accept a single cloud ``[N, 3]``
or a batch ``[B, N, 3]``; outputs keep the same leading layout.
"""
from __future__ import annotations

import numpy as np

from battrack.tensor import EmptySetError


def _batched(points):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 2:
        return pts[None], True
    return pts, False


def farthest_point_sampling(points, m: int, start: int = 0) -> np.ndarray:
    """Greedy max-min sampling; returns ``[m]`` (or ``[B, m]``) indices."""
    pts, single = _batched(points)
    b, n, _ = pts.shape
    if n < 1:
        raise EmptySetError("farthest_point_sampling: empty cloud")
    if m > n:
        raise ValueError(f"farthest_point_sampling: m={m} exceeds {n} points")
    idx = np.empty((b, m), dtype=np.intp)
    rows = np.arange(b)
    cur = np.full(b, start, dtype=np.intp)
    best = np.full((b, n), np.inf)
    for i in range(m):
        idx[:, i] = cur
        d = np.sum((pts - pts[rows, cur][:, None, :]) ** 2, axis=2)
        np.minimum(best, d, out=best)
        cur = best.argmax(axis=1)
    return idx[0] if single else idx


def ball_query(centers, points, radius: float, max_k: int) -> np.ndarray:
    """Up to ``max_k`` in-radius point indices per center, ascending.

    Underfull groups repeat their first member; empty groups are filled with
    the index of the nearest point.
    """
    if radius <= 0 or max_k < 1:
        raise ValueError(f"ball_query: need radius > 0 and max_k >= 1 (got {radius}, {max_k})")
    ctr, single = _batched(centers)
    pts, _ = _batched(points)
    if pts.shape[1] == 0:
        raise EmptySetError("ball_query: no points to group")
    d2 = np.sum((ctr[:, :, None, :] - pts[:, None, :, :]) ** 2, axis=3)
    within = d2 <= radius * radius
    order = np.argsort(~within, axis=2, kind="stable")[:, :, :max_k]
    count = within.sum(axis=2)
    first = np.where(count > 0, order[:, :, 0], d2.argmin(axis=2))
    slot = np.arange(order.shape[2])
    out = np.where(slot[None, None, :] < count[:, :, None], order, first[:, :, None])
    if out.shape[2] < max_k:
        out = np.concatenate([out, np.repeat(first[:, :, None], max_k - out.shape[2], axis=2)], axis=2)
    return out[0] if single else out


def topk_smallest(dist, k: int) -> np.ndarray:
    """Per column, row indices of the ``k`` smallest entries in ascending order.

    ``[M1, M2] -> [k, M2]``; a leading batch axis is carried through.
    """
    d = np.asarray(dist, dtype=np.float64)
    if k > d.shape[-2]:
        raise ValueError(f"topk_smallest: k={k} exceeds {d.shape[-2]} rows")
    if k < 1:
        raise ValueError("topk_smallest: k must be at least 1")
    return np.argsort(d, axis=-2, kind="stable")[..., :k, :]


def random_subsample_indices(n_in: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if n_in < 1:
        raise EmptySetError("random_subsample: empty input")
    if n_in >= n:
        return rng.permutation(n_in)[:n]
    return rng.integers(0, n_in, size=n)


def random_subsample(points, n: int, seed) -> np.ndarray:
    """Draw exactly ``n`` points: without replacement when possible, else with."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return pts[random_subsample_indices(len(pts), n, rng)]
