"""Command-line entry point: ``battrack synth|train|track|eval|ablate``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from battrack.config import ConfigError, build_configs, config_to_dict, load_config
from battrack.dataio import FormatError, TrackSequence, evaluable, load_dataset, read_annotations, save_dataset
from battrack.evaluation import (
    DEFAULT_BIN_EDGES, ope, precision_curve, precision_score, sparsity_report, success_curve, success_score,
    write_curve, write_metric_table, write_sparsity_table,
)
from battrack.model import BATNetwork
from battrack.nn import CheckpointError
from battrack.tensor import EmptySetError
from battrack.training import NumericalError, restore_checkpoint, train
from battrack.tracker import read_track_result, track_sequence, write_track_result

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

log = logging.getLogger("battrack")


def _configs(args, extra: dict | None = None):
    overrides = {k: v for k, v in (extra or {}).items() if v is not None}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if args.config:
        return load_config(args.config, overrides)
    return build_configs({"preset": args.preset, **overrides})


def _load_sequences(root) -> list[TrackSequence]:
    seqs = evaluable(load_dataset(root))
    if not seqs:
        raise FormatError(f"{root}: no sequence has points in its first box")
    return seqs


# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    from battrack.synth import generate_scene, load_scene_specs, random_scene_specs

    if args.spec:
        specs = load_scene_specs(args.spec)
    else:
        specs = random_scene_specs(args.count, seed=args.seed or 0, frames=args.frames, regime=args.regime,
                                   distractors=args.distractors)
    sequences = [generate_scene(s) for s in specs]
    save_dataset(args.out, sequences)
    print(f"wrote {len(sequences)} sequences to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    tcfg, rcfg = _configs(args, {"epochs": args.epochs, "lam": args.lam})
    sequences = _load_sequences(args.data)
    net = BATNetwork(tcfg)
    ckpt = Path(args.out)
    start, state = 0, None
    if args.resume:
        state, start = restore_checkpoint(args.resume, net)
        log.info("resuming from %s at epoch %d", args.resume, start)
    log_path = Path(args.log) if args.log else ckpt.with_suffix(".log.jsonl")
    if start == 0 and log_path.exists():
        log_path.unlink()
    result = train(net, sequences, rcfg, start_epoch=start, state=state, log_path=log_path, checkpoint_path=ckpt)
    last = result.history[-1]["loss"] if result.history else float("nan")
    print(f"trained {result.epochs_run} epochs on {len(sequences)} sequences; final loss {last:.4f}; checkpoint {ckpt}")
    return EXIT_OK


def load_network(checkpoint, overrides: dict) -> BATNetwork:
    sidecar = Path(checkpoint).with_suffix(".yaml")
    if not sidecar.exists():
        raise ConfigError(f"{sidecar}: config sidecar of checkpoint not found")
    stored = yaml.safe_load(sidecar.read_text()) or {}
    stored.update({k: v for k, v in overrides.items() if v is not None})
    tcfg, _ = build_configs(stored)
    net = BATNetwork(tcfg)
    from battrack.nn import load_checkpoint
    net.load_arrays(load_checkpoint(checkpoint))
    return net


def run_tracking(net: BATNetwork, sequences, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results, timing = [], []
    for seq in sequences:
        res = track_sequence(seq, net.cfg, net)
        results.append(res)
        write_track_result(out_dir / f"{seq.id}.txt", res)
        for i in range(1, len(res)):
            timing.append({"seq_id": seq.id, "frame": i, "k": net.cfg.k, "points": res.point_counts[i],
                           "fusion_us": res.fusion_us[i], "frame_us": res.times_us[i]})
    write_metric_table(out_dir / "timing.csv", timing)
    return results


def cmd_track(args) -> int:
    overrides = {"template_strategy": args.template_strategy, "search_mode": args.mode, "k": args.k,
                 "seed": args.seed}
    net = load_network(args.checkpoint, overrides)
    sequences = _load_sequences(args.data)
    results = run_tracking(net, sequences, args.out)
    fusion = [f for r in results for f in r.fusion_us[1:]]
    print(f"tracked {len(results)} sequences; mean fusion+head time {np.mean(fusion) if fusion else 0:.0f} us/frame "
          f"(k={net.cfg.k}); results in {args.out}")
    return EXIT_OK


def evaluate(results, gts, report_path, bins=None, iou: str = "3d") -> dict:
    rows = [{"seq_id": g.id, "frames": len(g) - 1, "success": success_score(r, g, iou),
             "precision": precision_score(r, g)} for r, g in zip(results, gts)]
    summary = ope(results, gts, iou)
    rows.append({"seq_id": "ALL", "frames": summary.frames, "success": summary.success,
                 "precision": summary.precision})
    report = Path(report_path)
    write_metric_table(report, rows)
    stem = report.with_suffix("")
    write_curve(f"{stem}_success.txt", *success_curve(summary.overlaps))
    write_curve(f"{stem}_precision.txt", *precision_curve(summary.distances))
    if bins is not None:
        write_sparsity_table(f"{stem}_sparsity.csv", sparsity_report(results, gts, bins, iou))
    return {"success": summary.success, "precision": summary.precision}


def cmd_eval(args) -> int:
    gt_root = Path(args.gt)
    if (gt_root / "velodyne").exists():
        gts = evaluable(load_dataset(gt_root))
    else:
        if args.bins is not None:
            raise FormatError(f"{gt_root}: sparsity bins need the scans, none found")
        gts = read_annotations(gt_root / "annotations.txt" if gt_root.is_dir() else gt_root)
    results = []
    for g in gts:
        path = Path(args.results) / f"{g.id}.txt"
        if not path.exists():
            raise FormatError(f"{path}: no result for sequence {g.id}")
        results.append(read_track_result(path))
    bins = None if args.bins is None else (args.bins or list(DEFAULT_BIN_EDGES))
    summary = evaluate(results, gts, args.report, bins, args.iou)
    print(f"Success {summary['success']:.2f}  Precision {summary['precision']:.2f}  ({len(gts)} sequences)")
    return EXIT_OK


def cmd_ablate(args) -> int:
    base_track, base_train = _configs(args, {"epochs": args.epochs})
    train_seqs = _load_sequences(args.train_data)
    test_seqs = _load_sequences(args.test_data)
    out = Path(args.out)
    rows = []
    for fusion in args.variants:
        scores = []
        for seed in args.seeds:
            values = {**config_to_dict(base_track, base_train), "fusion": fusion, "seed": seed, "model_seed": seed}
            tcfg, rcfg = build_configs(values)
            net = BATNetwork(tcfg)
            train(net, train_seqs, rcfg, log_path=out / f"{fusion}_s{seed}.log.jsonl")
            results = run_tracking(net, test_seqs, out / f"{fusion}_s{seed}")
            summary = ope(results, test_seqs)
            scores.append((summary.success, summary.precision))
            rows.append({"variant": fusion, "seed": str(seed), "success": summary.success,
                         "precision": summary.precision})
            print(f"{fusion} seed {seed}: Success {summary.success:.2f} Precision {summary.precision:.2f}", flush=True)
        mean = np.mean(scores, axis=0)
        rows.append({"variant": fusion, "seed": "mean", "success": float(mean[0]), "precision": float(mean[1])})
    write_metric_table(out / "ablation.csv", rows)
    print(f"ablation table: {out / 'ablation.csv'}")
    return EXIT_OK


# --------------------------------------------------------------------------


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat YAML config file")
    p.add_argument("--preset", default="desk", choices=["desk", "paper"],
                   help="defaults used when no --config is given (default: desk)")
    p.add_argument("--seed", type=int, help="seed for every stochastic component")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="battrack", description="Box-aware 3D single-object tracking")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("spec", nargs="?", help="scene spec YAML (omit for random scenes)")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--regime", choices=["dense", "sparse"], default="dense")
    p.add_argument("--distractors", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a network")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--log", help="JSONL training log (default: next to the checkpoint)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="track every sequence of a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="results directory")
    p.add_argument("--template-strategy", choices=["first_gt", "previous", "first_and_previous", "all_previous"])
    p.add_argument("--mode", choices=["long", "short"])
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score tracking results")
    p.add_argument("--results", required=True)
    p.add_argument("--gt", required=True, help="dataset root or annotation file")
    p.add_argument("--report", required=True, help="CSV report path")
    p.add_argument("--bins", type=float, nargs="*", help="sparsity bin edges (no values: default edges)")
    p.add_argument("--iou", choices=["3d", "bev"], default="3d")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score each fusion variant over several seeds")
    _add_config_args(p)
    p.add_argument("--train-data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--variants", nargs="+", default=["baff", "vanilla", "feature"],
                   choices=["baff", "vanilla", "feature"])
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, CheckpointError, FileNotFoundError, IsADirectoryError, EmptySetError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
