"""Shared point encoder: two set-abstraction layers (FPS, ball query, MLP, max-pool)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from battrack import tensor as T
from battrack.nn import MLP
from battrack.point_ops import ball_query, farthest_point_sampling
from battrack.tensor import EmptySetError, Tensor


@dataclass
class SeedSet:
    """Seed positions ``[B, M, 3]`` with features flattened to ``[B*M, D]``.

    ``indices`` maps each seed back to its row in the encoder input.
    """

    positions: np.ndarray
    features: Tensor
    indices: np.ndarray | None = None

    @property
    def batch(self) -> int:
        return self.positions.shape[0]

    @property
    def size(self) -> int:
        return self.positions.shape[1]


def set_abstraction(seeds: SeedSet, m_out: int, radius: float, max_k: int, mlp: MLP,
                    use_abs_xyz: bool = False) -> SeedSet:
    b, n, _ = seeds.positions.shape
    if m_out > n:
        raise ValueError(f"set_abstraction: m_out={m_out} exceeds {n} input points")
    centers_idx = farthest_point_sampling(seeds.positions, m_out)
    rows = np.arange(b)[:, None]
    centers = seeds.positions[rows, centers_idx]
    groups = ball_query(centers, seeds.positions, radius, max_k)  # [B, m, k]
    rel = seeds.positions[rows[:, :, None], groups] - centers[:, :, None, :]
    parts = [Tensor(rel.reshape(-1, 3))]
    if use_abs_xyz:
        parts.append(Tensor(np.repeat(centers.reshape(-1, 3), max_k, axis=0)))
    if seeds.features is not None:
        flat = (groups + (np.arange(b) * n)[:, None, None]).reshape(-1)
        parts.append(T.gather_rows(seeds.features, flat))
    x = T.concat_last_dim(parts) if len(parts) > 1 else parts[0]
    pooled = T.max_pool_groups(mlp(x), max_k)
    return SeedSet(centers, pooled, centers_idx)


class PointBackbone:
    """Input cloud -> ``2 * n_seeds`` -> ``n_seeds`` seeds with ``feature_dim`` features."""

    def __init__(self, rng: np.random.Generator, feature_dim: int = 64, radii=(0.3, 0.5),
                 max_k=(16, 16), use_abs_xyz: bool = False):
        self.feature_dim = feature_dim
        self.radii = tuple(radii)
        self.max_k = tuple(max_k)
        self.use_abs_xyz = use_abs_xyz
        extra = 3 if use_abs_xyz else 0
        self.layers = [
            MLP(3 + extra, (feature_dim, feature_dim), rng),
            MLP(3 + extra + feature_dim, (feature_dim, feature_dim), rng),
        ]

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_parameters(f"backbone.layer{i}"))
        return out

    def encode(self, points, n_seeds: int) -> SeedSet:
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 2:
            pts = pts[None]
        if pts.shape[1] == 0:
            raise EmptySetError("encode: empty point cloud")
        seeds = SeedSet(pts, None, None)
        counts = (min(2 * n_seeds, pts.shape[1]), n_seeds)
        origin = None
        for layer, m, r, k in zip(self.layers, counts, self.radii, self.max_k):
            seeds = set_abstraction(seeds, m, r, k, layer, self.use_abs_xyz)
            rows = np.arange(pts.shape[0])[:, None]
            origin = seeds.indices if origin is None else origin[rows, seeds.indices]
        seeds.indices = origin
        return seeds
