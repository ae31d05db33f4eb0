"""Command-line front end: ``colonmark <subcommand> ...``.

Every subcommand prints exactly one JSON document on stdout; progress and
human-readable tables go to stderr. Exit codes: 0 success, 2 usage or
configuration error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import LABELS, Split, class_distribution, consensus_filter, load_manifest, \
    save_manifest, split_by_video
from .errors import CheckpointError, ColonmarkError, InvalidConfig, NonFiniteLoss
from .evaluation import confusion, export_embeddings, metrics
from .imaging import (PreprocessConfig, adaptive_gamma_correct, apply_crop, detect_border_crop,
                      gamma_parameters, luminance_stats, read_image, resize_bilinear, write_image)
from .model import ViTConfig
from .sampling import compute_inclusion_probs, expected_post_sampling_distribution, plan_report
from .synthetic import SynthConfig, generate_synthetic_dataset
from .training import TrainConfig, train

log = logging.getLogger("colonmark")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

RUN_KEYS = {"model", "train", "preprocess", "image_root"}


class ConfigError(Exception):
    pass


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _read_json_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {p}: {e.strerror or e}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return data


def _vit_config(spec) -> ViTConfig:
    """A preset name, ``{"preset": name, ...overrides}``, or a full field dict."""
    if spec is None:
        return ViTConfig.desk()
    if isinstance(spec, str):
        return ViTConfig.preset(spec)
    if not isinstance(spec, dict):
        raise InvalidConfig("model must be a preset name or an object")
    spec = dict(spec)
    name = spec.pop("preset", None)
    unknown = set(spec) - set(ViTConfig.__dataclass_fields__)
    if unknown:
        raise InvalidConfig(f"unknown model keys: {sorted(unknown)}")
    return ViTConfig.preset(name, **spec) if name else ViTConfig.from_dict(spec)


def _run_config(args) -> tuple[ViTConfig, TrainConfig, Path]:
    raw = _read_json_config(args.config)
    unknown = set(raw) - RUN_KEYS
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
    vit = _vit_config(raw.get("model"))
    tdict = dict(raw.get("train", {}))
    if "preprocess" in tdict:
        raise InvalidConfig("put preprocess settings at the top level, not under 'train'")
    pdict = dict(raw.get("preprocess", {}))
    pdict.setdefault("target_size", [vit.image_size, vit.image_size])
    try:
        tdict["preprocess"] = PreprocessConfig.from_dict(pdict)
    except (TypeError, ValueError) as e:
        raise InvalidConfig(f"preprocess: {e}") from None
    overrides = {"epochs": args.epochs, "seed": args.seed, "learning_rate": args.lr,
                 "batch_size": args.batch_size, "sam_rho": args.rho}
    tdict.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_sampling:
        tdict["sampling"] = False
    try:
        tcfg = TrainConfig.from_dict(tdict)
    except TypeError as e:
        raise InvalidConfig(str(e)) from None
    tcfg.validate()
    vit.validate()
    root = args.image_root or raw.get("image_root") or str(Path(args.manifest).parent)
    return vit, tcfg, Path(root)


def _preprocess_for(ckpt) -> PreprocessConfig:
    size = ckpt.vit_config.image_size
    stored = (ckpt.train_config or {}).get("preprocess")
    if stored:
        return PreprocessConfig.from_dict(stored)
    return PreprocessConfig(target_size=(size, size))


# ---- subcommands ----

def cmd_gen_data(args) -> dict:
    raw = _read_json_config(args.config)
    try:
        cfg = SynthConfig.from_dict(raw) if raw else SynthConfig()
    except (TypeError, ValueError) as e:
        raise InvalidConfig(f"synthetic-data config: {e}") from None
    manifest = generate_synthetic_dataset(cfg, args.seed, args.out)
    counts = {}
    for split in Split:
        recs = manifest.select(split)
        if len(recs):
            per = [0] * len(LABELS)
            for r in recs:
                per[r.label_a.index] += 1
            counts[split.value] = dict(zip((lab.value for lab in LABELS), per))
    log.info("wrote %d frames to %s", len(manifest), args.out)
    return {"out": str(args.out), "frames": len(manifest), "counts": counts,
            "manifest": str(Path(args.out) / "manifest.jsonl")}


def cmd_sample_plan(args) -> dict:
    m = consensus_filter(load_manifest(args.manifest))
    train_dist = class_distribution(m, Split.TRAIN)
    plan = compute_inclusion_probs(train_dist, class_distribution(m, Split.SNAPSHOT))
    return json.loads(plan_report(plan, expected_post_sampling_distribution(train_dist, plan)))


def cmd_preprocess(args) -> dict:
    raw = _read_json_config(args.config)
    if args.size is not None:
        raw["target_size"] = args.size
    if args.dark_threshold is not None:
        raw["dark_threshold"] = args.dark_threshold
    if args.no_gamma:
        raw["gamma"] = False
    try:
        cfg = PreprocessConfig.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise InvalidConfig(f"preprocess config: {e}") from None
    img = read_image(args.input)
    rect = detect_border_crop(img, cfg.dark_threshold)
    out = apply_crop(img, rect)
    gamma = None
    if cfg.gamma:
        gamma = gamma_parameters(luminance_stats(out))
        out = adaptive_gamma_correct(out)
    out = resize_bilinear(out, *cfg.target_size)
    write_image(args.output, out)
    return {"in": str(args.input), "out": str(args.output), "crop": list(rect), "gamma": gamma,
            "size": list(cfg.target_size)}


def cmd_split(args) -> dict:
    try:
        ratios = [float(v) for v in args.ratios.split(",")]
    except ValueError:
        raise InvalidConfig(f"--ratios must be comma-separated numbers, got {args.ratios!r}") from None
    m = split_by_video(load_manifest(args.manifest), ratios, args.seed)
    out = Path(args.out) if args.out else Path(args.manifest).with_suffix(".split.jsonl")
    save_manifest(m, out)
    summary = {}
    for split in Split:
        recs = m.select(split)
        if len(recs):
            summary[split.value] = {"videos": len(recs.video_ids()), "frames": len(recs)}
    return {"out": str(out), "splits": summary}


def cmd_train(args) -> dict:
    vit, tcfg, root = _run_config(args)
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.stem + ".log.jsonl")
    best_path = out.with_name(out.stem + ".best" + (out.suffix or ".ckpt"))
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text("", encoding="utf-8")

    def on_epoch(entry):
        with log_path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
        log.info("epoch %(epoch)d  loss %(train_loss)s  val %(val_accuracy)s  frames %(sampled_frames)d",
                 entry)

    result = train(manifest, vit, tcfg, root, on_epoch)
    save_checkpoint(result.final, out)
    best = None
    if result.best is not None:
        save_checkpoint(result.best, best_path)
        best = str(best_path)
    return {"checkpoint": str(out), "best_checkpoint": best,
            "best_epoch": result.best.epoch if result.best else None,
            "log": str(log_path), "epochs": tcfg.epochs, "history": result.history}


def cmd_eval(args) -> dict:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    root = args.image_root or str(Path(args.manifest).parent)
    report = metrics(confusion(ckpt.to_model(), manifest, Split(args.split), _preprocess_for(ckpt), root))
    sys.stderr.write(report.format_table() + "\n")
    return report.to_dict()


def cmd_embed(args) -> dict:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    root = args.image_root or str(Path(args.manifest).parent)
    proj = export_embeddings(ckpt.to_model(), manifest, Split(args.split), args.out, _preprocess_for(ckpt), root)
    return {"out": str(args.out), "rows": int(proj.coords.shape[0]),
            "explained_variance": proj.explained_variance.tolist(),
            "explained_ratio": proj.explained_ratio.tolist()}


def _split_name(s: str) -> str:
    try:
        return Split(s.upper()).value
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown split {s!r}") from None


def _size(s: str) -> list[int]:
    parts = s.lower().replace("x", ",").split(",")
    try:
        vals = [int(v) for v in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must be N or W,H, got {s!r}") from None
    if len(vals) == 1:
        vals *= 2
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"size must be N or W,H, got {s!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="colonmark", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"colonmark {__version__}")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                   help="verbosity of the stderr log")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="render a synthetic landmark dataset")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--config", help="JSON synthetic-data config (counts per split, image size, ...)")
    s.add_argument("--seed", type=int, default=0, help="generator seed")
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("sample-plan", help="print per-class inclusion probabilities for a manifest")
    s.add_argument("--manifest", required=True, help="manifest with TRAIN and SNAPSHOT frames")
    s.set_defaults(fn=cmd_sample_plan)

    s = sub.add_parser("preprocess", help="crop, gamma-correct and resize one image")
    s.add_argument("--in", dest="input", required=True, help="input image (PPM or PNG)")
    s.add_argument("--out", dest="output", required=True, help="output PPM path")
    s.add_argument("--config", help="JSON preprocess config")
    s.add_argument("--size", type=_size, help="target size, N or W,H (overrides config)")
    s.add_argument("--dark-threshold", type=float, help="border luminance threshold (overrides config)")
    s.add_argument("--no-gamma", action="store_true", help="skip adaptive gamma correction")
    s.set_defaults(fn=cmd_preprocess)

    s = sub.add_parser("split", help="assign whole videos to TRAIN/VAL/TEST")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ratios", default="0.8,0.1,0.1", help="TRAIN,VAL,TEST fractions")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="output manifest (default: <manifest>.split.jsonl)")
    s.set_defaults(fn=cmd_split)

    s = sub.add_parser("train", help="train a classifier and write checkpoints")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", help="JSON run config with keys model, train, preprocess, image_root")
    s.add_argument("--out", required=True, help="final checkpoint path; the best-VAL one goes next to it")
    s.add_argument("--log", help="JSONL epoch log (default: <out stem>.log.jsonl)")
    s.add_argument("--image-root", help="directory image paths are relative to (default: manifest dir)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--lr", type=float, help="learning rate")
    s.add_argument("--batch-size", type=int)
    s.add_argument("--rho", type=float, help="SAM neighbourhood radius")
    s.add_argument("--no-sampling", action="store_true", help="train on every TRAIN frame each epoch")
    s.set_defaults(fn=cmd_train)

    for name, fn, help_ in (("eval", cmd_eval, "confusion matrix and metrics for one split"),
                            ("embed", cmd_embed, "export 2-D feature projections as CSV")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--manifest", required=True)
        s.add_argument("--split", type=_split_name, default="TEST")
        s.add_argument("--image-root", help="directory image paths are relative to (default: manifest dir)")
        if name == "embed":
            s.add_argument("--out", required=True, help="CSV output path")
        s.set_defaults(fn=fn)
    return p


def _configure_logging(level: str) -> None:
    # a fresh handler per call so the stream is whatever sys.stderr is now
    for h in list(log.handlers):
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(level)
    log.propagate = False


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _configure_logging(args.log_level)
    try:
        _emit(args.fn(args))
        return EXIT_OK
    except NonFiniteLoss as e:
        log.error("numerical failure: %s (batch %s)", e, e.batch_indices[:8])
        return EXIT_NUMERIC
    except CheckpointError as e:
        log.error("bad checkpoint: %s", e)
        return EXIT_IO
    except (ConfigError, ColonmarkError, ValueError) as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except OSError as e:
        log.error("I/O error: %s", e)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
