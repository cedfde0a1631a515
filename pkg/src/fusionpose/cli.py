"""Command-line surface: generate | train | eval | ablate | export-poses.

Every command exits 0 on success; failures print one machine-parseable
line (``fusionpose: error: <message>``) to stderr and exit 2 for bad
input/config or 3 for checkpoint/config mismatches.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .ablate import STUDIES, run_study, write_study_csv
from .config import RunConfig, load_config
from .dataio import InstanceDataset, load_split
from .errors import CheckpointMismatchError, FusionPoseError
from .evaluate import evaluate_dataset, export_poses, write_window_scores
from .model import FusionPoseModel
from .params import ParameterStore
from .synthdata.generate import generate_dataset
from .train import (Trainer, TrainingAborted, latest_checkpoint,
                    load_checkpoint, write_loss_log)


def _load_model(cfg: RunConfig, checkpoint: str) -> FusionPoseModel:
    store = ParameterStore(seed=cfg.seed)
    model = FusionPoseModel(cfg.model_config(), store)
    load_checkpoint(store, checkpoint, model.cfg)
    return model


def _dataset(cfg: RunConfig, split: str, model_cfg) -> InstanceDataset:
    return InstanceDataset(load_split(cfg.path("dataset_dir"), split), model_cfg,
                           cfg.iou_threshold, cfg.gate_distance, cfg.max_misses)


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    summary = generate_dataset(cfg.scene_config(), cfg.path("dataset_dir"))
    print(f"dataset written to {summary['out_dir']}")
    print(f"persons={summary['persons']} "
          f"frames={summary['frames']} "
          f"mean_points_per_frame={summary['points_per_frame']:.1f}")
    for split, names in sorted(summary["files"].items()):
        print(f"{split}: {' '.join(names)}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    model_cfg = cfg.model_config()
    dataset = _dataset(cfg, "train", model_cfg)
    store = ParameterStore(seed=cfg.seed)
    model = FusionPoseModel(model_cfg, store)
    trainer = Trainer(cfg, dataset, model, store)
    ckpt_dir = cfg.path("checkpoint_dir")
    report_dir = cfg.path("report_dir")
    report_dir.mkdir(parents=True, exist_ok=True)

    def progress(row):
        parts = " ".join(f"{k}={row[k]:.4f}" for k in
                         ("motion", "consistency", "proj", "cd_agu", "total"))
        print(f"epoch={row['epoch']} step={row['step']} {parts}")

    if cfg.overfit_steps > 0:
        rows = trainer.overfit(cfg.overfit_steps, progress=progress)
    else:
        rows = trainer.train(checkpoint_dir=ckpt_dir, resume=not args.no_resume,
                             progress=progress)
    write_loss_log(trainer.log_rows, report_dir / "loss_log.csv")
    print(f"loss log: {report_dir / 'loss_log.csv'}")
    if cfg.overfit_steps == 0:
        print(f"checkpoints: {ckpt_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    checkpoint = args.checkpoint or latest_checkpoint(cfg.path("checkpoint_dir"))
    mode = "oracle" if args.oracle else ("baseline" if args.baseline else "model")
    model = None
    if mode == "model":
        if checkpoint is None:
            raise FusionPoseError("no checkpoint given and none found")
        model = _load_model(cfg, checkpoint)
        dataset = _dataset(cfg, args.split, model.cfg)
    else:
        dataset = _dataset(cfg, args.split, cfg.model_config())
    report, windows = evaluate_dataset(model, dataset, args.split,
                                       cfg.bone_samples, cfg.squared_cd,
                                       mode=mode)
    out = Path(args.out) if args.out else cfg.path("report_dir") / f"metrics_{args.split}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out)
    write_window_scores(windows, out.with_name(out.stem + "_windows.csv"))
    print(f"split={report.split} pck={report.pck:.2f} mpjpe_mm={report.mpjpe_mm:.2f} "
          f"cd_mm={report.cd_mm:.2f} n={report.n_samples}")
    print(f"report: {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    model = None
    if args.study in ("density", "occlusion"):
        checkpoint = args.checkpoint or latest_checkpoint(cfg.path("checkpoint_dir"))
        if checkpoint is None:
            raise FusionPoseError(f"study {args.study!r} needs a trained checkpoint")
        model = _load_model(cfg, checkpoint)
    rows = run_study(cfg, args.study, model=model)
    out = Path(args.out) if args.out else cfg.path("report_dir") / f"ablation_{args.study}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_study_csv(rows, out)
    for r in rows:
        print(f"{r.study}/{r.arm}: pck={r.pck:.2f} mpjpe_mm={r.mpjpe_mm:.2f} "
              f"cd_mm={r.cd_mm:.2f}")
    print(f"report: {out}")
    return 0


def cmd_export_poses(args) -> int:
    cfg = load_config(args.config)
    model = None
    if not args.gt:
        checkpoint = args.checkpoint or latest_checkpoint(cfg.path("checkpoint_dir"))
        if checkpoint is None:
            raise FusionPoseError("no checkpoint given and none found")
        model = _load_model(cfg, checkpoint)
        model_cfg = model.cfg
    else:
        model_cfg = cfg.model_config()
    sequences = load_split(cfg.path("dataset_dir"), args.split)
    if args.sequence:
        if args.sequence not in sequences:
            raise FusionPoseError(f"sequence {args.sequence!r} not in split "
                                  f"{args.split!r}")
        sequences = {args.sequence: sequences[args.sequence]}
    dataset = InstanceDataset(sequences, model_cfg, cfg.iou_threshold,
                              cfg.gate_distance, cfg.max_misses)
    out = Path(args.out) if args.out else cfg.path("report_dir") / "poses.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = export_poses(model, dataset, out, use_gt=args.gt)
    print(f"wrote {rows} joint rows to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusionpose",
        description="LiDAR+camera weakly-supervised 3D pose pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a dataset")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train (resumes from checkpoints)")
    p.add_argument("--config", required=True)
    p.add_argument("--no-resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="val")
    p.add_argument("--out")
    p.add_argument("--oracle", action="store_true",
                   help="score ground truth against itself")
    p.add_argument("--baseline", action="store_true",
                   help="score the static rest-pose baseline")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation study")
    p.add_argument("--config", required=True)
    p.add_argument("--study", required=True, choices=STUDIES)
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-poses", help="dump per-frame poses as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="val")
    p.add_argument("--sequence")
    p.add_argument("--out")
    p.add_argument("--gt", action="store_true", help="export ground truth")
    p.set_defaults(func=cmd_export_poses)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CheckpointMismatchError as exc:
        print(f"fusionpose: error: {exc}", file=sys.stderr)
        return 3
    except (FusionPoseError, TrainingAborted, FileNotFoundError) as exc:
        print(f"fusionpose: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
