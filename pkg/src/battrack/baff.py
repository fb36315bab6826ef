"""Template-to-search feature fusion.

Three variants share one surface (``fuse(template, template_bc, search)``):

* :class:`BoxAwareFusion` - BoxCloud comparison, top-k grouping, mini-PointNet.
  With ``comparison="feature"`` the distance map is built from backbone
  features instead (the "without BoxCloud comparison" ablation).
* :class:`VanillaFusion` - cosine-similarity fusion over all template points
  with the template BoxCloud appended to the aggregation input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from battrack import tensor as T
from battrack.backbone import SeedSet
from battrack.boxcloud import batched_distance_map
from battrack.nn import MLP
from battrack.point_ops import topk_smallest
from battrack.tensor import ShapeError, Tensor


@dataclass
class FusedSearch:
    positions: np.ndarray  # [B, M2, 3]
    features: Tensor  # [B*M2, D]
    predicted_boxcloud: Tensor  # [B*M2, 9] (27 for the offset variant)
    neighbors: np.ndarray | None = None  # [B, k, M2] template indices per search seed


class BoxCloudHead:
    """Point-wise MLP ``D -> D -> 9`` predicting box coordinates of search seeds."""

    def __init__(self, rng: np.random.Generator, feature_dim: int, width: int = 9):
        self.mlp = MLP(feature_dim, (feature_dim, width), rng, final_relu=False)
        self.width = width

    def __call__(self, search: SeedSet) -> Tensor:
        return self.mlp(search.features)

    def named_parameters(self) -> dict[str, Tensor]:
        return self.mlp.named_parameters("baff.bcnet")


def predict_boxcloud(head: BoxCloudHead, search: SeedSet) -> Tensor:
    return head(search)


def boxcloud_loss(pred: Tensor, gt, mask, batch_size: int = 1) -> Tensor:
    """Masked smooth-L1 between predicted and true box coordinates.

    Rows are grouped into ``batch_size`` equal consecutive samples; each sample
    is normalized by its own in-box count and the samples are averaged.
    Samples without in-box points contribute zero.
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ShapeError(f"boxcloud_loss: prediction {pred.shape} vs target {gt.shape}")
    m = np.asarray(mask, dtype=np.float64).reshape(batch_size, -1)
    counts = m.sum(axis=1, keepdims=True)
    w = np.divide(m, counts * batch_size, out=np.zeros_like(m), where=counts > 0)
    return T.weighted_smooth_l1(pred, gt, w.reshape(-1))


def _flat_rows(idx: np.ndarray, per_sample: int) -> np.ndarray:
    """``[B, M2, k]`` per-sample indices -> flat row indices in ``(b, i, j)`` order."""
    b = idx.shape[0]
    return (idx + (np.arange(b) * per_sample)[:, None, None]).reshape(-1)


class BoxAwareFusion:
    def __init__(self, rng: np.random.Generator, feature_dim: int = 64, k: int = 4,
                 boxcloud_width: int = 9, use_template_boxcloud: bool = True,
                 comparison: str = "boxcloud"):
        if comparison not in ("boxcloud", "feature"):
            raise ValueError(f"unknown comparison {comparison!r}")
        self.k = k
        self.comparison = comparison
        self.use_template_boxcloud = use_template_boxcloud
        self.bcnet = BoxCloudHead(rng, feature_dim, boxcloud_width)
        in_dim = 3 + feature_dim + (boxcloud_width if use_template_boxcloud else 0) + feature_dim
        self.mini = MLP(in_dim, (feature_dim,) * 3, rng)

    def named_parameters(self) -> dict[str, Tensor]:
        return {**self.bcnet.named_parameters(), **self.mini.named_parameters("baff.mini")}

    def fuse(self, template: SeedSet, template_bc: np.ndarray, search: SeedSet, k: int | None = None) -> FusedSearch:
        """Aggregate, for every search seed, its ``k`` nearest template seeds.

        A ``k`` above the template seed count means "every template seed".
        """
        b, m1, _ = template.positions.shape
        m2 = search.size
        k = min(self.k if k is None else k, m1)
        if k < 1:
            raise ValueError(f"k must be at least 1, got {k}")
        if template_bc.shape[:2] != (b, m1):
            raise ShapeError(f"template BoxCloud {template_bc.shape} does not match {m1} template seeds")
        pred = self.bcnet(search)
        if self.comparison == "boxcloud":
            dist = batched_distance_map(template_bc, pred.data.reshape(b, m2, -1))
        else:
            d = template.features.shape[1]
            dist = batched_distance_map(template.features.data.reshape(b, m1, d),
                                        search.features.data.reshape(b, m2, d))
        nbr = topk_smallest(dist, k)  # [B, k, M2]
        flat = _flat_rows(nbr.transpose(0, 2, 1), m1)
        parts = [Tensor(template.positions.reshape(-1, 3)[flat]), T.gather_rows(template.features, flat)]
        if self.use_template_boxcloud:
            parts.append(Tensor(template_bc.reshape(b * m1, -1)[flat]))
        parts.append(T.gather_rows(search.features, np.repeat(np.arange(b * m2), k)))
        fused = T.max_pool_groups(self.mini(T.concat_last_dim(parts)), k)
        return FusedSearch(search.positions, fused, pred, nbr)


class VanillaFusion:
    """Cosine-similarity correlation over every template seed, BoxCloud appended."""

    def __init__(self, rng: np.random.Generator, feature_dim: int = 64, boxcloud_width: int = 9,
                 use_template_boxcloud: bool = True):
        self.use_template_boxcloud = use_template_boxcloud
        self.bcnet = BoxCloudHead(rng, feature_dim, boxcloud_width)
        in_dim = 3 + feature_dim + (boxcloud_width if use_template_boxcloud else 0) + 1
        self.mini = MLP(in_dim, (feature_dim,) * 3, rng)
        self.post = MLP(feature_dim, (feature_dim, feature_dim), rng, final_relu=False)

    def named_parameters(self) -> dict[str, Tensor]:
        return {
            **self.bcnet.named_parameters(),
            **self.mini.named_parameters("baff.mini"),
            **self.post.named_parameters("baff.post"),
        }

    def fuse(self, template: SeedSet, template_bc: np.ndarray, search: SeedSet, k: int | None = None) -> FusedSearch:
        b, m1, _ = template.positions.shape
        m2 = search.size
        pred = self.bcnet(search)
        every = np.broadcast_to(np.arange(m1), (b, m2, m1))
        flat_t = _flat_rows(every, m1)
        flat_s = np.repeat(np.arange(b * m2), m1)
        nt = T.l2_normalize_rows(template.features)
        ns = T.l2_normalize_rows(search.features)
        sim = T.sum_cols(T.mul(T.gather_rows(nt, flat_t), T.gather_rows(ns, flat_s)))
        parts = [Tensor(template.positions.reshape(-1, 3)[flat_t]), T.gather_rows(template.features, flat_t)]
        if self.use_template_boxcloud:
            parts.append(Tensor(template_bc.reshape(b * m1, -1)[flat_t]))
        parts.append(sim)
        pooled = T.max_pool_groups(self.mini(T.concat_last_dim(parts)), m1)
        return FusedSearch(search.positions, self.post(pooled), pred, None)
