"""Command-line entry point: ``srcaps {train,eval,upscale,compare}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import OrderedDict
from pathlib import Path

import torch

from . import config as run_config
from .checkpoint import Checkpoint, shape_diff
from .data import DatasetSpec, bicubic_resize, load_image, load_pairs, save_image
from .errors import CheckpointError, ConfigurationError, SRCapsError, UsageError
from .metrics import EvalReport, evaluate_pair
from .model import build
from .train import model_from_checkpoint, train_loop

log = logging.getLogger("srcaps")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _Usage(Exception):
    pass


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise _Usage(f"--set expects key=value, got {item!r}")
        try:
            out.update(run_config.parse_text(f"{key.strip()} = {value.strip()}"))
        except ConfigurationError:
            out[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        out["train.seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        out["train.epochs"] = args.epochs
    if getattr(args, "scale", None) is not None:
        out["model.r"] = args.scale
    if getattr(args, "loss", None) is not None:
        out["loss.name"] = args.loss
    if getattr(args, "dataset", None) is not None:
        out["data.root"] = str(args.dataset)
    if getattr(args, "deterministic", False):
        out["train.deterministic"] = True
    return out


def _write_echo(out_dir: Path, name: str, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def cmd_train(args) -> int:
    cfg = run_config.load(args.config, _overrides(args))
    if not cfg.data.root:
        raise _Usage("no dataset given (use --dataset or data.root)")
    root = Path(cfg.data.root)
    if not root.exists():
        raise _Usage(f"dataset path does not exist: {root}")
    r = cfg.model.r
    lr_dir = cfg.data.lr_dir or None
    train_spec = DatasetSpec(root, cfg.data.train_split, r, cfg.data.hr_dir, lr_dir, cfg.data.pattern)
    try:
        train_pairs = load_pairs(train_spec)
    except FileNotFoundError as exc:
        raise _Usage(str(exc)) from exc
    valid_spec = DatasetSpec(root, cfg.data.valid_split, r, cfg.data.hr_dir, lr_dir, cfg.data.pattern)
    val_pairs = load_pairs(valid_spec) if valid_spec.hr_path.is_dir() else []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.dumps())
    resume = Checkpoint.load(args.resume) if args.resume else None
    torch.manual_seed(cfg.train.seed)
    model = build(cfg.model, cfg.train.seed)
    final, history = train_loop(model, train_pairs, cfg.train, val_pairs, out, resume)
    last = history[-1]["train_loss"] if history else float("nan")
    print(f"trained {final.epoch} epochs ({final.step} steps), last loss {last:.6f}; run dir {out}")
    return EXIT_OK


def _load_model(args, cfg_overrides: dict):
    ckpt = Checkpoint.load(args.checkpoint)
    if args.config or cfg_overrides.get("model.r") is not None:
        cfg = run_config.load(args.config, cfg_overrides)
        expected = OrderedDict(build(cfg.model, 0).named_parameters())
        found = OrderedDict((k, v) for k, v in ckpt.params.items() if not k.startswith("loss."))
        diff = shape_diff(expected, found)
        if diff:
            raise _Usage("checkpoint does not match configuration:\n  " + "\n  ".join(diff))
    return model_from_checkpoint(ckpt)


def _upscaler(args):
    """Return ``(fn, r)`` where fn maps a (1,3,h,w) [0,255] image to its x r estimate."""
    if args.baseline:
        if args.baseline != "bicubic":
            raise _Usage(f"unknown baseline {args.baseline!r}")
        r = args.scale or 4

        def fn(lr):
            return bicubic_resize(lr, r).round()
        return fn, r
    if not args.checkpoint:
        raise _Usage("give --checkpoint or --baseline bicubic")
    overrides = {"model.r": args.scale} if args.scale else {}
    model = _load_model(args, overrides)

    def fn(lr):
        with torch.no_grad():
            return model(lr).round()
    return fn, model.config.r


def cmd_eval(args) -> int:
    if not args.dataset:
        raise _Usage("--dataset is required")
    fn, r = _upscaler(args)
    spec = DatasetSpec(Path(args.dataset), args.split, r)
    try:
        pairs = load_pairs(spec)
    except FileNotFoundError as exc:
        raise _Usage(str(exc)) from exc
    border = r if args.crop is None else args.crop
    report = EvalReport(Path(args.dataset).name, r)
    for pair in pairs:
        sr = fn(pair.lr.unsqueeze(0))
        report.add(pair.image_id, evaluate_pair(sr, pair.hr.unsqueeze(0), border))
    _finish_report(report, args, {"command": "eval", "dataset": str(args.dataset),
                                  "split": args.split, "scale": r, "border": border,
                                  "baseline": args.baseline, "checkpoint": args.checkpoint})
    return EXIT_OK


def _finish_report(report: EvalReport, args, echo: dict) -> None:
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report.to_csv())
        (out / "summary.json").write_text(report.summary_json() + "\n")
        _write_echo(out, "command.json", echo)
    agg = report.aggregate()
    print(f"{report.dataset} x{report.scale}: {len(report.rows)} images")
    for key in ("psnr", "ssim", "ms_ssim", "psnr3", "ssim3"):
        print(f"  {key:<8} {agg[key]:.5f}")


def cmd_upscale(args) -> int:
    fn, r = _upscaler(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for path in args.inputs:
        path = Path(path)
        try:
            sr = fn(load_image(path))
            save_image(sr[0], out / (path.stem + ".png"))
        except (OSError, SRCapsError) as exc:
            failures += 1
            print(f"error: {path}: {exc}", file=sys.stderr)
    _write_echo(out, "command.json", {"command": "upscale", "inputs": [str(p) for p in args.inputs],
                                      "scale": r, "baseline": args.baseline,
                                      "checkpoint": args.checkpoint})
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_compare(args) -> int:
    sr_dir, hr_dir = Path(args.sr_dir), Path(args.hr_dir)
    for d in (sr_dir, hr_dir):
        if not d.is_dir():
            raise _Usage(f"not a directory: {d}")
    sr_names = {p.name for p in sr_dir.glob("*.png")}
    hr_names = {p.name for p in hr_dir.glob("*.png")}
    if sr_names != hr_names or not sr_names:
        raise _Usage(f"filename sets differ: only in {sr_dir}: {sorted(sr_names - hr_names)}; "
                     f"only in {hr_dir}: {sorted(hr_names - sr_names)}")
    report = EvalReport(hr_dir.name, 0)
    for name in sorted(hr_names):
        sr, hr = load_image(sr_dir / name), load_image(hr_dir / name)
        if sr.shape != hr.shape:
            raise _Usage(f"{name}: size {tuple(sr.shape[2:])} vs {tuple(hr.shape[2:])}")
        report.add(Path(name).stem, evaluate_pair(sr, hr, args.crop or 0))
    _finish_report(report, args, {"command": "compare", "sr_dir": str(sr_dir),
                                  "hr_dir": str(hr_dir), "border": args.crop or 0})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srcaps", description="Capsule-based x4 super-resolution")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on <dataset>/train (validating on <dataset>/valid)")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="seed for initialization and patch sampling")
    p.add_argument("--epochs", type=int)
    p.add_argument("--scale", type=int, choices=(2, 3, 4))
    p.add_argument("--loss", help="loss name (l1, mix, adaptive, ...)")
    p.add_argument("--dataset", help="dataset root holding <split>/HR and optional <split>/LRx<r>")
    p.add_argument("--out", default="runs/srcaps", help="run directory")
    p.add_argument("--deterministic", action="store_true", help="force deterministic kernels")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="extra config override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or baseline on a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--config", help="configuration the checkpoint is expected to match")
    p.add_argument("--baseline", choices=("bicubic",))
    p.add_argument("--dataset", help="directory with HR/ (and optional LRx<r>/) or <split>/HR")
    p.add_argument("--split", default="valid")
    p.add_argument("--scale", type=int, choices=(2, 3, 4))
    p.add_argument("--crop", type=int, help="border pixels removed before scoring (default: scale)")
    p.add_argument("--out", help="directory for report.csv and summary.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("upscale", help="super-resolve PNG files")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--checkpoint")
    p.add_argument("--config", help="configuration the checkpoint is expected to match")
    p.add_argument("--baseline", choices=("bicubic",))
    p.add_argument("--scale", type=int, choices=(2, 3, 4))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_upscale)

    p = sub.add_parser("compare", help="metrics between two directories of PNGs")
    p.add_argument("sr_dir")
    p.add_argument("hr_dir")
    p.add_argument("--crop", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (_Usage, ConfigurationError, UsageError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, SRCapsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
