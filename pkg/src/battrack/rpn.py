"""Voting proposal head: seed votes, targetness, vote clustering, proposals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from battrack import tensor as T
from battrack.baff import FusedSearch
from battrack.geometry import Box7, normalize_angle, points_in_box
from battrack.nn import MLP
from battrack.point_ops import ball_query, farthest_point_sampling
from battrack.tensor import EmptySetError, Tensor

POSITIVE_RADIUS = 0.3


@dataclass
class VoteSet:
    vote_positions: Tensor  # [B*M2, 3]
    vote_features: Tensor  # [B*M2, D]
    seed_scores: Tensor  # [B*M2, 1] targetness logits
    seed_positions: np.ndarray  # [B, M2, 3]

    @property
    def batch(self) -> int:
        return self.seed_positions.shape[0]


@dataclass(frozen=True)
class Proposal:
    center: tuple[float, float, float]
    heading: float
    score: float

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(self.heading))


@dataclass
class ProposalSet:
    """Proposals for a batch, ``count`` per sample, flattened sample-major."""

    centers: Tensor  # [B*P, 3]
    headings: Tensor  # [B*P, 1]
    scores: Tensor  # [B*P, 1]
    cluster_centers: np.ndarray  # [B, P, 3]
    batch: int
    count: int

    def to_list(self, sample: int = 0) -> list[Proposal]:
        lo, hi = sample * self.count, (sample + 1) * self.count
        c, h, s = self.centers.data[lo:hi], self.headings.data[lo:hi, 0], self.scores.data[lo:hi, 0]
        return [Proposal(tuple(map(float, c[i])), float(h[i]), float(s[i])) for i in range(self.count)]


class ProposalHead:
    def __init__(self, rng: np.random.Generator, feature_dim: int = 64, n_proposals: int = 16,
                 radius: float = 0.3, group_size: int = 16):
        d = feature_dim
        self.n_proposals = n_proposals
        self.radius = radius
        self.group_size = group_size
        # Zero last layer: initial votes sit on their seeds.
        self.vote_mlp = MLP(d, (d, d, 3 + d), rng, final_relu=False, zero_last=True)
        self.score_mlp = MLP(d, (d, d, 1), rng, final_relu=False)
        self.prop_mini = MLP(3 + d + 1, (d, d, d), rng)
        self.prop_head = MLP(d, (d, 5), rng, final_relu=False)

    def named_parameters(self) -> dict[str, Tensor]:
        return {
            **self.vote_mlp.named_parameters("rpn.vote"),
            **self.score_mlp.named_parameters("rpn.seedscore"),
            **self.prop_mini.named_parameters("rpn.prop.mini"),
            **self.prop_head.named_parameters("rpn.prop.head"),
        }

    def vote(self, fused: FusedSearch) -> VoteSet:
        out = self.vote_mlp(fused.features)
        d = fused.features.shape[1]
        seeds = Tensor(fused.positions.reshape(-1, 3))
        positions = T.add(seeds, T.slice_cols(out, 0, 3))
        features = T.add(fused.features, T.slice_cols(out, 3, 3 + d))
        scores = self.score_mlp(fused.features)
        return VoteSet(positions, features, scores, fused.positions)

    def cluster_and_propose(self, votes: VoteSet, n_proposals: int | None = None,
                            radius: float | None = None) -> ProposalSet:
        p = self.n_proposals if n_proposals is None else n_proposals
        r = self.radius if radius is None else radius
        b = votes.batch
        m2 = votes.seed_positions.shape[1]
        if p > m2:
            raise ValueError(f"n_proposals={p} exceeds {m2} votes")
        vp = votes.vote_positions.data.reshape(b, m2, 3)
        centers_idx = farthest_point_sampling(vp, p, start=0)  # [B, P]
        rows = np.arange(b)[:, None]
        groups = ball_query(vp[rows, centers_idx], vp, r, self.group_size)  # [B, P, K]
        offset = (np.arange(b) * m2)
        member = (groups + offset[:, None, None]).reshape(-1)
        center_flat = (centers_idx + offset[:, None]).reshape(-1)
        k = self.group_size
        anchor = T.gather_rows(votes.vote_positions, center_flat)
        rel = T.scale(T.sub(T.gather_rows(votes.vote_positions, member),
                            T.gather_rows(anchor, np.repeat(np.arange(b * p), k))), 1.0 / r)
        x = T.concat_last_dim([
            rel,
            T.gather_rows(votes.vote_features, member),
            T.gather_rows(T.sigmoid(votes.seed_scores), member),
        ])
        out = self.prop_head(T.max_pool_groups(self.prop_mini(x), k))
        centers = T.add(anchor, T.slice_cols(out, 0, 3))
        return ProposalSet(centers, T.slice_cols(out, 3, 4), T.slice_cols(out, 4, 5),
                           vp[rows, centers_idx], b, p)


def rpn_loss(votes: VoteSet, proposals: ProposalSet, gt_boxes: list[Box7],
             weights=(1.0, 1.0, 1.0, 1.0)) -> tuple[Tensor, dict[str, Tensor]]:
    """Vote regression + seed targetness + proposal score + proposal regression.

    Every term is averaged per sample, then over the batch.  Returns the
    weighted total and the individual terms.
    """
    b = votes.batch
    if len(gt_boxes) != b:
        raise ValueError(f"rpn_loss: {len(gt_boxes)} ground-truth boxes for batch {b}")
    m2 = votes.seed_positions.shape[1]
    p = proposals.count
    inside = np.stack([points_in_box(votes.seed_positions[i], gt_boxes[i]) for i in range(b)]).astype(float)
    gt_centers = np.stack([g.center for g in gt_boxes])
    gt_heads = np.array([g.heading for g in gt_boxes])

    seed_counts = inside.sum(axis=1, keepdims=True)
    w_vote = np.divide(inside, seed_counts * b, out=np.zeros_like(inside), where=seed_counts > 0)
    l_vote = T.weighted_smooth_l1(votes.vote_positions, np.repeat(gt_centers, m2, axis=0), w_vote.reshape(-1))
    l_seed = T.weighted_bce_with_logits(votes.seed_scores, inside.reshape(-1), np.full(b * m2, 1.0 / (b * m2)))

    dist = np.linalg.norm(proposals.cluster_centers - gt_centers[:, None, :], axis=2)
    positive = (dist < POSITIVE_RADIUS).astype(float)  # [B, P]
    l_score = T.weighted_bce_with_logits(proposals.scores, positive.reshape(-1), np.full(b * p, 1.0 / (b * p)))
    pos_counts = positive.sum(axis=1, keepdims=True)
    w_reg = np.divide(positive, pos_counts * b, out=np.zeros_like(positive), where=pos_counts > 0)
    target = np.concatenate([np.repeat(gt_centers, p, axis=0), np.repeat(gt_heads, p)[:, None]], axis=1)
    l_reg = T.weighted_smooth_l1(T.concat_last_dim([proposals.centers, proposals.headings]), target, w_reg.reshape(-1))

    terms = {"vote": l_vote, "seed": l_seed, "prop_score": l_score, "prop_reg": l_reg}
    total = None
    for wt, term in zip(weights, terms.values()):
        scaled = T.scale(term, wt)
        total = scaled if total is None else T.add(total, scaled)
    return total, terms


def select_best(proposals: list[Proposal]) -> Proposal:
    if not proposals:
        raise EmptySetError("select_best: no proposals")
    best = 0
    for i, prop in enumerate(proposals):
        if prop.score > proposals[best].score:
            best = i
    return proposals[best]
