"""Joint optimization of ``L_bc + lam * L_rpn`` with Adam and a step schedule."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from battrack.config import TemplateStrategy, TrackerConfig, TrainConfig, config_to_dict
from battrack.dataio import TrackSequence
from battrack.geometry import Box7, box_to_frame
from battrack.model import BATNetwork
from battrack.nn import load_checkpoint, save_checkpoint
from battrack.tensor import Tape
from battrack.tracker import EmptySearchError, EmptyTemplateError, make_search_area, make_template

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


def schedule(epoch: int, base_lr: float = 0.001, decay: float = 5.0, step: int = 12) -> float:
    return base_lr * decay ** (-(epoch // step))


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """In-place bias-corrected Adam update.

    Parameters whose gradient is ``None`` did not take part in the loss and
    are left alone, moments included.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if p.shape != g.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


@dataclass
class Sample:
    template: np.ndarray
    template_box: Box7
    search: np.ndarray
    gt_box: Box7  # in the search frame


def make_training_samples(sequences: list[TrackSequence], tcfg: TrackerConfig, rcfg: TrainConfig,
                          rng: np.random.Generator) -> list[Sample]:
    """Consecutive-frame pairs with a randomly perturbed search reference.

    Template: first and previous ground-truth crops.  Search: the current
    ground-truth box shifted uniformly by up to ``shift_xy`` meters in x and
    y and ``shift_heading_deg`` degrees in heading, then enlarged.
    """
    out = []
    shift_h = math.radians(rcfg.shift_heading_deg)
    for seq in sequences:
        for t in range(1, len(seq)):
            history = [seq.frames[0], seq.frames[t - 1]]
            pts, gt = seq.frames[t]
            dx, dy = rng.uniform(-rcfg.shift_xy, rcfg.shift_xy, size=2)
            dh = rng.uniform(-shift_h, shift_h)
            ref = Box7(gt.x + dx, gt.y + dy, gt.z, gt.w, gt.l, gt.h, gt.heading + dh)
            try:
                tpl, tpl_box = make_template(history, TemplateStrategy.FIRST_AND_PREVIOUS, tcfg.n_template_points, rng)
                search, _ = make_search_area(pts, ref, tcfg.search_margin, tcfg.n_search_points, rng)
            except (EmptyTemplateError, EmptySearchError):
                continue
            out.append(Sample(tpl, tpl_box, search, box_to_frame(gt, ref)))
    return out


def total_loss(net: BATNetwork, samples: list[Sample], lam: float = 1.0, rpn_weights=(1.0, 1.0, 1.0, 1.0),
               k: int | None = None):
    """Forward a batch and return ``(L_bc + lam * L_rpn, terms)``."""
    if lam < 0:
        raise ValueError(f"lam must be non-negative, got {lam}")
    out = net.forward(np.stack([s.template for s in samples]), [s.template_box for s in samples],
                      np.stack([s.search for s in samples]), k)
    return net.loss(out, [s.gt_box for s in samples], lam, rpn_weights)


def checkpoint_arrays(net: BATNetwork, state: AdamState, next_epoch: int) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {n: p.data for n, p in net.parameters().items()}
    arrays["train.epoch"] = np.array(float(next_epoch))
    arrays["adam.t"] = np.array(float(state.t))
    for name, m in state.m.items():
        arrays[f"adam.m.{name}"] = m
    for name, v in state.v.items():
        arrays[f"adam.v.{name}"] = v
    return arrays


def write_checkpoint(path, net: BATNetwork, state: AdamState, next_epoch: int, train_cfg: TrainConfig) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, checkpoint_arrays(net, state, next_epoch))
    sidecar = path.with_suffix(".yaml")
    sidecar.write_text(yaml.safe_dump(config_to_dict(net.cfg, train_cfg), sort_keys=True))


def restore_checkpoint(path, net: BATNetwork) -> tuple[AdamState, int]:
    arrays = load_checkpoint(path)
    net.load_arrays(arrays)
    state = AdamState(int(arrays.get("adam.t", 0)))
    for key, value in arrays.items():
        if key.startswith("adam.m."):
            state.m[key[len("adam.m."):]] = value.copy()
        elif key.startswith("adam.v."):
            state.v[key[len("adam.v."):]] = value.copy()
    return state, int(arrays.get("train.epoch", 0))


@dataclass
class TrainResult:
    history: list[dict]
    state: AdamState
    epochs_run: int


def train(net: BATNetwork, sequences: list[TrackSequence], rcfg: TrainConfig, *,
          start_epoch: int = 0, state: AdamState | None = None, log_path=None,
          checkpoint_path=None, on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """Train ``net`` in place.

    Each epoch draws its samples from a generator seeded by ``(seed, epoch)``,
    so an interrupted run resumed from a checkpoint replays the same data.
    """
    params = net.parameters()
    arrays = {n: p.data for n, p in params.items()}
    state = state or AdamState()
    history: list[dict] = []
    log_file = open(log_path, "a") if log_path else None
    try:
        for epoch in range(start_epoch, rcfg.epochs):
            rng = np.random.default_rng([rcfg.seed, epoch])
            lr = schedule(epoch, rcfg.lr, rcfg.lr_decay, rcfg.lr_step)
            samples = make_training_samples(sequences, net.cfg, rcfg, rng)
            order = rng.permutation(len(samples))
            for step, lo in enumerate(range(0, len(order), rcfg.batch_size)):
                t0 = time.perf_counter()
                batch = [samples[i] for i in order[lo:lo + rcfg.batch_size]]
                with Tape() as tape:
                    loss, terms = total_loss(net, batch, rcfg.lam, rcfg.loss_weights)
                tape.backward(loss)
                grads = {n: p.grad for n, p in params.items()}
                adam_step(arrays, grads, state, lr)
                for p in params.values():
                    p.grad = None
                record = {"epoch": epoch, "step": step, "loss": loss.item(), "lr": lr,
                          "wall_s": round(time.perf_counter() - t0, 4)}
                shown = terms if rcfg.lam else {"bc": terms["bc"]}
                record.update({f"L_{k}": v.item() for k, v in shown.items()})
                history.append(record)
                if log_file:
                    log_file.write(json.dumps(record) + "\n")
                if on_step:
                    on_step(record)
            if checkpoint_path and ((epoch + 1) % rcfg.checkpoint_every == 0 or epoch + 1 == rcfg.epochs):
                write_checkpoint(checkpoint_path, net, state, epoch + 1, rcfg)
            log.info("epoch %d lr %.2e mean loss %.4f", epoch, lr,
                     np.mean([r["loss"] for r in history if r["epoch"] == epoch] or [float("nan")]))
    finally:
        if log_file:
            log_file.close()
    return TrainResult(history, state, rcfg.epochs - start_epoch)
