"""Command-line entry point: ``gazeguard <command> ...``.

Exit codes: 0 success, 1 config/argument error, 2 input-data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import storage
from .config import PipelineConfig, load_config
from .detector import build_records, evaluate_detector, infer_state, train_detector
from .errors import ConfigError, DataError, GazeGuardError
from .formats import atomic_write_text, write_json
from .gazenet import (ablation, build_backbone, build_gaze_model, evaluate, finetune, images_to_arrays)
from .gradcore import LayerGraph
from .pretext import pretrain, projection_head
from .synthcam import generate_feature_dataset, generate_image_dataset, generate_session

log = logging.getLogger("gazeguard")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _out(cfg: PipelineConfig, given, default: str) -> Path:
    return Path(given) if given else Path(cfg.artifact_dir) / default


def _with_suffix(path: Path, suffix: str) -> Path:
    return Path(str(path) + suffix)


# -- commands --------------------------------------------------------------

def cmd_gen(args, cfg: PipelineConfig) -> int:
    session = cfg.session
    if args.n <= 0:
        raise ConfigError("-n must be > 0")
    if args.features:
        out = _out(cfg, args.output, "features.csv")
        records = generate_feature_dataset(session, args.n)
        storage.write_features(out, records)
        n_normal = sum(r.label for r in records)
        print(f"wrote {len(records)} feature records to {out}")
        print(f"labels: normal={n_normal} abnormal={len(records) - n_normal} "
              f"({n_normal / len(records):.1%} normal)")
    elif args.images:
        out = _out(cfg, args.output, "images")
        images = generate_image_dataset(session, args.n)
        index = storage.write_image_dataset(out, images)
        print(f"wrote {len(images)} eye images and {index}")
    else:
        out = _out(cfg, args.output, f"session{args.session_id}")
        frames = generate_session(session, args.n, args.session_id)
        path = storage.write_session(out, frames)
        n_normal = sum(f.label for f in frames)
        print(f"wrote session of {len(frames)} frames to {path}")
        print(f"labels: normal={n_normal} abnormal={len(frames) - n_normal}")
    return 0


def cmd_pretrain(args, cfg: PipelineConfig) -> int:
    pixels, _, _ = storage.read_image_dataset(args.images)
    arch = args.arch or cfg.gaze.arch
    seed = cfg.pretext.seed
    backbone = build_backbone(arch, seed)
    result = pretrain(pixels, backbone, projection_head(seed=seed), cfg.pretext)
    out = _out(cfg, args.output, "pretext.ggck")
    storage.save_bundle(out, backbone, {"kind": "backbone", "arch": arch})
    storage.write_trace(_with_suffix(out, ".trace.csv"), ["epoch", "mean_loss"], result.trace)
    write_json(_with_suffix(out, ".metrics.json"), {
        "images": len(pixels), "epochs": len(result.trace),
        "first_epoch_loss": result.trace[0][1], "final_epoch_loss": result.trace[-1][1]})
    print(f"pretext backbone ({arch}) -> {out}; loss {result.trace[0][1]:.4f} -> {result.trace[-1][1]:.4f}")
    return 0


def _load_backbone(path) -> tuple[LayerGraph, str]:
    graph, meta = storage.load_bundle(path, "backbone")
    return graph, meta["arch"]


def cmd_train_gaze(args, cfg: PipelineConfig) -> int:
    data = storage.read_image_dataset(args.images)
    gcfg = cfg.gaze
    if args.freeze is not None:
        gcfg = gcfg.model_copy(update={"freeze_backbone": args.freeze})
    if args.from_pretext:
        backbone, arch = _load_backbone(args.from_pretext)
        pretext_id = storage.file_digest(args.from_pretext)
    else:
        arch = gcfg.arch
        backbone = build_backbone(arch, gcfg.seed)
        pretext_id = None
    model = build_gaze_model(backbone, gcfg.seed)
    model.meta = {"arch": arch, "pretext": pretext_id, "freeze_backbone": gcfg.freeze_backbone}
    result = finetune(model, data, gcfg)
    report = evaluate(model, *data)
    out = _out(cfg, args.output, "gaze.ggck")
    storage.save_gaze_model(out, model)
    storage.write_trace(_with_suffix(out, ".trace.csv"), ["epoch", "mean_loss"], result.trace)
    write_json(_with_suffix(out, ".metrics.json"), {
        "images": len(data[0]), "first_epoch_loss": result.trace[0][1],
        "final_epoch_loss": result.trace[-1][1],
        "train_mean_angular_error_deg": report.mean_angular_error_deg,
        "backbone_sha256": model.backbone_digest()})
    print(f"gaze model ({arch}, {'pretext' if pretext_id else 'random init'}, "
          f"{'frozen' if gcfg.freeze_backbone else 'trainable'} backbone) -> {out}; "
          f"train error {report.mean_angular_error_deg:.3f} deg")
    return 0


def cmd_build_features(args, cfg: PipelineConfig) -> int:
    model = storage.load_gaze_model(args.gaze)
    sessions = [storage.read_session(p) for p in args.session]
    records = build_records(model, cfg.kalman, sessions)
    out = _out(cfg, args.output, "features.csv")
    storage.write_features(out, records)
    print(f"wrote {len(records)} records from {len(sessions)} session(s) to {out}")
    return 0


def cmd_train_detector(args, cfg: PipelineConfig) -> int:
    x, y = storage.read_features(args.features)
    result = train_detector(x, y, cfg.detector)
    out = _out(cfg, args.output, "detector.ggck")
    storage.save_detector(out, result.model)
    storage.write_trace(_with_suffix(out, ".trace.csv"), ["epoch", "train_loss", "val_accuracy"], result.trace)
    metrics = result.test_metrics.to_json()
    metrics["validation"] = result.val_metrics.to_json()
    metrics["best_epoch"] = result.best_epoch
    metrics["split_sizes"] = [len(s) for s in result.split]
    write_json(_with_suffix(out, ".metrics.json"), metrics)
    print(f"detector -> {out}; test accuracy {result.test_metrics.accuracy:.4f}")
    return 0


def cmd_ablation(args, cfg: PipelineConfig) -> int:
    ab = cfg.ablation
    if args.images:
        data = storage.read_image_dataset(args.images)
    else:
        data = images_to_arrays(generate_image_dataset(cfg.session, ab.n_images))
    out = _out(cfg, args.output, "ablation")

    def report(run):
        print(f"  {run.arch:<10} {run.variant:<10} seed={run.seed}: {run.mean_angular_error_deg:.3f} deg", flush=True)

    try:
        result = ablation(data, ab.archs, ab.seeds, cfg.pretext, cfg.gaze, ab.test_fraction,
                          split_seed=cfg.seed, on_run=report)
    except GazeGuardError as exc:
        exc.args = (f"ablation failed: {exc}",)
        raise
    storage.write_trace(out / "ablation.csv", ["arch", "variant", "seed", "mean_angular_error_deg"],
                        result.csv_rows())
    table = result.table()
    atomic_write_text(out / "ablation.txt", table + "\n")
    print(table)
    return 0


def cmd_eval(args, cfg: PipelineConfig) -> int:
    if args.detector:
        if not args.features:
            raise ConfigError("eval --detector needs --features")
        model = storage.load_detector(args.detector)
        x, y = storage.read_features(args.features)
        metrics = evaluate_detector(model, x, y).to_json()
    else:
        if not args.images:
            raise ConfigError("eval --gaze needs --images")
        model = storage.load_gaze_model(args.gaze)
        rep = evaluate(model, *storage.read_image_dataset(args.images))
        metrics = {"mean_angular_error_deg": rep.mean_angular_error_deg, "n": int(len(rep.errors_deg))}
    out = _out(cfg, args.output, "eval.json")
    write_json(out, metrics)
    for key, value in metrics.items():
        print(f"{key}: {value}")
    return 0


def cmd_replay(args, cfg: PipelineConfig) -> int:
    detector = storage.load_detector(args.detector)
    gaze = storage.load_gaze_model(args.gaze)
    frames = storage.read_session(args.session)
    records = build_records(gaze, cfg.kalman, [frames], online=True)
    decisions = list(infer_state(detector, records, k=args.debounce))
    out = _out(cfg, args.output, "replay.csv")
    atomic_write_text(out, storage.inference_csv([f.index for f in frames], decisions))
    labels = np.array([d.label for d in decisions])
    stable = [d.stable for d in decisions]
    summary = {
        "frames": len(decisions),
        "fraction_abnormal": float(np.mean(labels == 0)),
        "transitions": int(sum(a != b for a, b in zip(stable, stable[1:]))),
    }
    truth = np.array([f.label for f in frames])
    if np.all(truth >= 0):
        summary["accuracy_vs_labels"] = float(np.mean(labels == truth))
    write_json(_with_suffix(out, ".summary.json"), summary)
    for key, value in summary.items():
        print(f"{key}: {value}")
    return 0


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gazeguard", description="Gaze-based abnormal behavior detection pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", "-c", help="pipeline config JSON (defaults used when omitted)")
        sp.add_argument("-o", "--output", help="output path (default: under artifact_dir)")

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    common(g)
    kind = g.add_mutually_exclusive_group(required=True)
    kind.add_argument("--images", action="store_true", help="eye images (PGM + index.csv)")
    kind.add_argument("--features", action="store_true", help="feature records (CSV)")
    kind.add_argument("--session", action="store_true", help="a temporally coherent recorded session")
    g.add_argument("-n", type=int, required=True, help="number of samples / frames")
    g.add_argument("--session-id", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    g = sub.add_parser("pretrain", help="contrastive pretraining of a backbone")
    common(g)
    g.add_argument("--images", required=True, help="image index CSV or its directory")
    g.add_argument("--arch", choices=["lenet5ish", "tinyconv"])
    g.set_defaults(func=cmd_pretrain)

    g = sub.add_parser("train-gaze", help="train the gaze regressor")
    common(g)
    g.add_argument("--images", required=True)
    g.add_argument("--from-pretext", help="backbone checkpoint from `pretrain`")
    g.add_argument("--freeze", dest="freeze", action="store_true", default=None)
    g.add_argument("--no-freeze", dest="freeze", action="store_false")
    g.set_defaults(func=cmd_train_gaze)

    g = sub.add_parser("build-features", help="run the gaze model over sessions into feature records")
    common(g)
    g.add_argument("--gaze", required=True)
    g.add_argument("--session", required=True, nargs="+")
    g.set_defaults(func=cmd_build_features)

    g = sub.add_parser("train-detector", help="train the abnormal-behavior MLP")
    common(g)
    g.add_argument("--features", required=True)
    g.set_defaults(func=cmd_train_detector)

    g = sub.add_parser("ablation", help="baseline vs pretrained backbone comparison")
    common(g)
    g.add_argument("--images", help="image dataset (generated from the config when omitted)")
    g.set_defaults(func=cmd_ablation)

    g = sub.add_parser("eval", help="evaluate a detector or a gaze model")
    common(g)
    which = g.add_mutually_exclusive_group(required=True)
    which.add_argument("--detector")
    which.add_argument("--gaze")
    g.add_argument("--features")
    g.add_argument("--images")
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("replay", help="replay a recorded session through the full pipeline")
    common(g)
    g.add_argument("--detector", required=True)
    g.add_argument("--gaze", required=True)
    g.add_argument("--session", required=True)
    g.add_argument("--debounce", type=int, default=5)
    g.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except GazeGuardError as exc:
        print(f"gazeguard {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"gazeguard {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"gazeguard {args.command}: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
