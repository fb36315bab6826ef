"""The full tracking network: shared backbone, fusion, BoxCloud head, proposal head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from battrack import tensor as T
from battrack.backbone import PointBackbone, SeedSet
from battrack.baff import BoxAwareFusion, FusedSearch, VanillaFusion, boxcloud_loss
from battrack.boxcloud import compute_boxcloud, compute_offset_boxcloud
from battrack.config import Fusion, TrackerConfig
from battrack.geometry import Box7, points_in_box
from battrack.nn import assign_parameters
from battrack.rpn import ProposalHead, ProposalSet, VoteSet, rpn_loss
from battrack.tensor import Tensor


@dataclass
class ForwardOutput:
    template: SeedSet
    template_bc: np.ndarray
    search: SeedSet
    fused: FusedSearch
    votes: VoteSet
    proposals: ProposalSet


def boxcloud_of(points, box: Box7, variant: str = "euclidean") -> np.ndarray:
    if variant == "offset":
        return compute_offset_boxcloud(points, box)
    return compute_boxcloud(points, box)


class BATNetwork:
    def __init__(self, cfg: TrackerConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.model_seed)
        d = cfg.feature_dim
        self.backbone = PointBackbone(rng, d, cfg.radii, cfg.group_sizes, cfg.use_abs_xyz)
        if cfg.fusion is Fusion.VANILLA:
            self.fusion = VanillaFusion(rng, d, cfg.boxcloud_width, cfg.use_template_boxcloud)
        else:
            comparison = "feature" if cfg.fusion is Fusion.FEATURE else "boxcloud"
            self.fusion = BoxAwareFusion(rng, d, cfg.k, cfg.boxcloud_width, cfg.use_template_boxcloud, comparison)
        self.rpn = ProposalHead(rng, d, cfg.n_proposals, cfg.proposal_radius, cfg.proposal_group)

    def parameters(self) -> dict[str, Tensor]:
        return {
            **self.backbone.named_parameters(),
            **self.fusion.named_parameters(),
            **self.rpn.named_parameters(),
        }

    def load_arrays(self, arrays) -> None:
        assign_parameters(self.parameters(), arrays)

    def forward(self, template_points, template_boxes: list[Box7], search_points, k: int | None = None) -> ForwardOutput:
        tpl = np.asarray(template_points, dtype=np.float64)
        srch = np.asarray(search_points, dtype=np.float64)
        if tpl.ndim == 2:
            tpl, srch = tpl[None], srch[None]
        template = self.backbone.encode(tpl, self.cfg.template_seeds)
        search = self.backbone.encode(srch, self.cfg.search_seeds)
        template_bc = np.stack([
            boxcloud_of(template.positions[i], template_boxes[i], self.cfg.boxcloud_variant)
            for i in range(template.batch)
        ])
        fused = self.fusion.fuse(template, template_bc, search, k)
        votes = self.rpn.vote(fused)
        proposals = self.rpn.cluster_and_propose(votes)
        return ForwardOutput(template, template_bc, search, fused, votes, proposals)

    def boxcloud_targets(self, out: ForwardOutput, gt_boxes: list[Box7]) -> tuple[np.ndarray, np.ndarray]:
        pos = out.search.positions
        gt = np.concatenate([boxcloud_of(pos[i], gt_boxes[i], self.cfg.boxcloud_variant) for i in range(len(gt_boxes))])
        mask = np.concatenate([points_in_box(pos[i], gt_boxes[i]) for i in range(len(gt_boxes))])
        return gt, mask.astype(np.float64)

    def loss(self, out: ForwardOutput, gt_boxes: list[Box7], lam: float = 1.0,
             rpn_weights=(1.0, 1.0, 1.0, 1.0)) -> tuple[Tensor, dict[str, Tensor]]:
        """``L_bc + lam * L_rpn``, every term averaged per sample over the batch."""
        gt, mask = self.boxcloud_targets(out, gt_boxes)
        l_bc = boxcloud_loss(out.fused.predicted_boxcloud, gt, mask, batch_size=len(gt_boxes))
        l_rpn, terms = rpn_loss(out.votes, out.proposals, gt_boxes, rpn_weights)
        total = T.add(l_bc, T.scale(l_rpn, lam)) if lam else l_bc
        return total, {"bc": l_bc, "rpn": l_rpn, **terms}
