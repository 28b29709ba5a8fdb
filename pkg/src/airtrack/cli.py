"""Command-line interface.

Subcommands cover the full loop: generate a synthetic scenario, track
it, score the result, train the two learned comparators, probe
retrieval quality, and verify gradients.  The ``AIRTRACK_LOG``
environment variable sets the log level (DEBUG, INFO, WARNING, ...).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .checkpoint import (
    checkpoint_kind,
    load_siamese_checkpoint,
    save_checkpoint,
)
from .config import (
    ASSOCIATORS,
    COMPARATOR_NAMES,
    PRESET_NAMES,
    RunConfig,
    load_run_config,
    preset_run_config,
    save_run_config,
)
from .deepekf import DeepEkfConfig, DeepEkfModel, dekf_gradient_check
from .errors import AirtrackError
from .evaluation import DEFAULT_IOU_MIN
from .io_formats import (
    load_detections,
    load_tracks,
    write_assignments,
    write_detections,
    write_tracks,
)
from .pipeline import (
    contrastive_pairs,
    motion_train_items,
    reid_eval,
    run_eval,
    run_tracking,
    texture_identities,
    train_deepekf,
    train_siamese,
    twin_identities,
)
from .scenario import PRESETS, generate_scenario, preset_spec
from .visual import SiameseConfig, SiameseModel, siamese_gradient_check

log = logging.getLogger("airtrack")

GRADCHECK_TOL = 1e-4


def _setup_logging() -> None:
    level_name = os.environ.get("AIRTRACK_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load_config(args: argparse.Namespace) -> RunConfig:
    """Config resolution: --config is a preset name or a JSON path;
    explicit flags override individual fields."""
    base: RunConfig
    if args.config is None:
        base = preset_run_config("mht_ekf_ssd")
    elif args.config in PRESET_NAMES:
        base = preset_run_config(args.config)
    else:
        base = load_run_config(args.config)
    updates = {}
    if args.associator is not None:
        updates["associator"] = args.associator
    if args.comparators is not None:
        names = tuple(n.strip() for n in args.comparators.split(",") if n.strip())
        updates["comparators"] = names
        updates["weights"] = {n: 1.0 / len(names) for n in names}
    if args.seed is not None:
        updates["seed"] = args.seed
    checkpoints = dict(base.checkpoints)
    for key, flag in (
        ("dekf", "dekf_checkpoint"),
        ("siamese", "siamese_checkpoint"),
        ("siamese_attn", "siamese_attn_checkpoint"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            checkpoints[key] = value
    if checkpoints != base.checkpoints:
        updates["checkpoints"] = checkpoints
    return dataclasses.replace(base, **updates) if updates else base


def _config_base_dir(args: argparse.Namespace) -> Optional[str]:
    if args.config is not None and args.config not in PRESET_NAMES:
        return os.path.dirname(os.path.abspath(args.config))
    return None


# -- subcommands -------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    spec = preset_spec(args.preset, seed=args.seed if args.seed is not None else 0)
    log.info("generating preset %r with seed %d", args.preset, spec.seed)
    scenario = generate_scenario(spec)
    out = _ensure_out(args.out)
    det_path = os.path.join(out, "detections.tsv")
    gt_path = os.path.join(out, "gt.tsv")
    write_detections(det_path, scenario.frames, chip_dir="chips")
    write_tracks(gt_path, scenario.gt)
    n_dets = sum(len(f) for f in scenario.frames)
    log.info("wrote %d detections over %d frames", n_dets, spec.n_frames)
    print(f"wrote {det_path} ({n_dets} detections, {spec.n_frames} frames)")
    print(f"wrote {gt_path} ({len(scenario.gt)} records)")
    return 0


def cmd_track(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    frames = load_detections(args.detections)
    n_frames = args.n_frames
    if n_frames is None:
        indices = [d.frame_index for group in frames for d in group]
        n_frames = (max(indices) + 1) if indices else 0
    log.info(
        "tracking %d frames with associator=%s comparators=%s",
        n_frames,
        cfg.associator,
        ",".join(cfg.comparators),
    )
    run = run_tracking(cfg, frames, base_dir=_config_base_dir(args), n_frames=n_frames)
    out = _ensure_out(args.out)
    assign_path = os.path.join(out, "assignments.tsv")
    tracks_path = os.path.join(out, "tracks.tsv")
    config_path = os.path.join(out, "run_config.json")
    write_assignments(assign_path, run.assignments)
    write_tracks(tracks_path, run.records)
    save_run_config(cfg, config_path)
    n_tracks = len({r.track_id for r in run.records})
    print(f"wrote {assign_path} ({len(run.assignments)} rows)")
    print(f"wrote {tracks_path} ({n_tracks} tracks)")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    gt = load_tracks(args.gt)
    pred = load_tracks(args.pred)
    report = run_eval(gt, pred, iou_min=args.iou_min)
    table = report.as_table()
    print(table)
    if args.out is not None:
        out = _ensure_out(args.out)
        report_path = os.path.join(out, "report.txt")
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
        print(f"wrote {report_path}")
    return 0


def cmd_train_dekf(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    items = motion_train_items(
        args.n_items,
        turn_rate_max=args.turn_rate_max,
        bounce_prob=args.bounce_prob,
        seed=seed,
    )
    config = DeepEkfConfig(cell=args.cell)
    log.info("training sequence predictor: %d items, %d steps", len(items), args.steps)
    model, losses = train_deepekf(items, config, steps=args.steps, seed=seed)
    out = _ensure_out(args.out)
    ckpt_path = os.path.join(out, "dekf.ckpt")
    save_checkpoint(model, ckpt_path)
    _write_losses(os.path.join(out, "dekf_losses.tsv"), losses)
    print(f"loss {losses[0]:.4f} -> {losses[-1]:.4f} over {len(losses)} steps")
    print(f"wrote {ckpt_path}")
    return 0


def _siamese_config(args: argparse.Namespace) -> SiameseConfig:
    size = args.model_chip_size
    if size % 8 != 0:
        raise ValueError("model chip size must be a multiple of 8")
    return SiameseConfig(chip_size=size, grid=size // 8, attention=args.attention)


def cmd_train_reid(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    train_kw = {}
    if args.twins:
        # Near-identical pair: oversample it so the hardest negatives are
        # common, and render with the exposure jitter the pair preset uses.
        identities = twin_identities() * 3 + texture_identities(
            min(args.n_identities, 6), seed=seed
        )
        train_kw = dict(frame_range=90, noise_std=0.04, gain_jitter=0.12)
    else:
        identities = texture_identities(args.n_identities, seed=seed)
    config = _siamese_config(args)
    log.info(
        "training embedding model: %d identities, %d steps, attention=%s",
        len(identities),
        args.steps,
        config.attention,
    )
    model, losses = train_siamese(identities, config, steps=args.steps, seed=seed, **train_kw)
    out = _ensure_out(args.out)
    name = "siamese_attn.ckpt" if config.attention else "siamese.ckpt"
    ckpt_path = os.path.join(out, name)
    save_checkpoint(model, ckpt_path)
    _write_losses(os.path.join(out, "reid_losses.tsv"), losses)
    print(f"loss {losses[0]:.4f} -> {losses[-1]:.4f} over {len(losses)} steps")
    print(f"wrote {ckpt_path}")
    return 0


def cmd_reid_eval(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    if checkpoint_kind(args.checkpoint) != "siamese":
        raise AirtrackError(f"{args.checkpoint} is not an embedding-model checkpoint")
    model = load_siamese_checkpoint(args.checkpoint)
    identities = texture_identities(args.n_identities, seed=seed)
    result = reid_eval(model, identities, seed=seed + 1)
    print(f"rank1    {result.rank1:.4f}")
    print(f"mean_ap  {result.mean_ap:.4f}")
    print(f"queries  {result.n_queries}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    worst = 0.0
    if args.model in ("dekf", "both"):
        cfg = DeepEkfConfig(chip_size=8, chip_embed_dim=4, conv_channels=(2, 3), hidden_dim=6, attention_dim=4)
        model = DeepEkfModel(cfg, seed=seed)
        items = motion_train_items(3, history_len=4, chip_size=8, seed=seed)
        report = dekf_gradient_check(model, items, (256, 256), seed=seed, n_samples=args.n_samples)
        err = report["max_rel_err"]
        worst = max(worst, err)
        print(f"dekf     max rel err {err:.3e} ({report['n_checked']} params)")
    if args.model in ("siamese", "both"):
        cfg = SiameseConfig(chip_size=16, grid=2, conv_channels=(2, 3, 4), embed_dim=8, heads=2)
        model = SiameseModel(cfg, seed=seed)
        rng = np.random.default_rng(seed)
        pairs = contrastive_pairs(texture_identities(3, seed=seed), 4, chip_size=16, rng=rng)
        report = siamese_gradient_check(model, pairs, seed=seed, n_samples=args.n_samples)
        err = report["max_rel_err"]
        worst = max(worst, err)
        print(f"siamese  max rel err {err:.3e} ({report['n_checked']} params)")
    ok = worst < GRADCHECK_TOL
    print(f"{'PASS' if ok else 'FAIL'} (tolerance {GRADCHECK_TOL:g})")
    return 0 if ok else 1


def _write_losses(path: str, losses: Sequence[float]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# airtrack-losses v1\n")
        for i, loss in enumerate(losses):
            fh.write(f"{i}\t{loss:.17g}\n")


# -- parser ------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="preset name or run-config JSON path")
    p.add_argument("--associator", choices=list(ASSOCIATORS))
    p.add_argument(
        "--comparators",
        help=f"comma-separated subset of {','.join(COMPARATOR_NAMES)}",
    )
    p.add_argument("--dekf-checkpoint")
    p.add_argument("--siamese-checkpoint")
    p.add_argument("--siamese-attn-checkpoint")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airtrack",
        description="Multi-object tracking over detection streams",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    p.add_argument("--preset", choices=sorted(PRESETS), required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="run a tracker over a detection file")
    p.add_argument("--detections", required=True)
    p.add_argument("--n-frames", type=int, help="process this many frames (default: up to the last detection)")
    _add_config_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score tracks against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--iou-min", type=float, default=DEFAULT_IOU_MIN)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-dekf", help="train the sequence predictor")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--n-items", type=int, default=200)
    p.add_argument("--turn-rate-max", type=float, default=0.0)
    p.add_argument("--bounce-prob", type=float, default=0.0)
    p.add_argument("--cell", choices=["gru", "lstm"], default="gru")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_dekf)

    p = sub.add_parser("train-reid", help="train the chip embedding model")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--n-identities", type=int, default=10)
    p.add_argument("--model-chip-size", type=int, default=32)
    attn = p.add_mutually_exclusive_group()
    attn.add_argument("--attention", dest="attention", action="store_true", default=True)
    attn.add_argument("--no-attention", dest="attention", action="store_false")
    p.add_argument("--twins", action="store_true", help="include the near-identical runner pair")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_reid)

    p = sub.add_parser("reid-eval", help="retrieval metrics for an embedding checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n-identities", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_reid_eval)

    p = sub.add_parser("gradcheck", help="verify analytic gradients numerically")
    p.add_argument("--model", choices=["dekf", "siamese", "both"], default="both")
    p.add_argument("--n-samples", type=int, default=150)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AirtrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
