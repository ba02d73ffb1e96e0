"""Command-line entry point: gen-data, train, infer, eval, selfcheck.

Exit codes: 0 success, 1 usage, 2 data or config, 3 numerical failure.
Errors go to stderr as one line: ``argan: error kind=<kind> code=<n> msg="..."``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .data import (GT_THRESHOLD, PRED_THRESHOLD, DatasetError, ImageFormatError, SampleTriplet,
                   binarize_mask, gen_synthetic_sample, load_dataset, read_image, to_nchw,
                   write_image, write_triplet)
from .metrics import detection_report, removal_report
from .tensor import ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, msg: str, code: int, kind: str):
        super().__init__(msg)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, EXIT_USAGE, "usage")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="argan", description="Joint shadow detection and removal with a numpy GAN.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--size", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--unlabeled", action="store_true", help="write shadow images only, under U/")

    t = sub.add_parser("train", help="train from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--unlabeled")
    t.add_argument("--out", required=True, help="checkpoint path; the CSV log is written next to it")

    i = sub.add_parser("infer", help="write per-step attention maps and outputs")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--out-prefix", required=True)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--mask")
    e.add_argument("--mode", required=True, choices=["detect", "remove"])

    sub.add_parser("selfcheck", help="run the oracle battery")
    return p


def log_path_for(ckpt: str | os.PathLike) -> Path:
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.name + ".log.csv")


def cmd_gen_data(args) -> int:
    if args.count < 0 or args.size < 1:
        raise CliError("--count must be >= 0 and --size >= 1", EXIT_USAGE, "usage")
    root = Path(args.out)
    for k in ("U",) if args.unlabeled else ("A", "B", "C"):
        (root / k).mkdir(parents=True, exist_ok=True)
    for seed in range(args.seed, args.seed + args.count):
        t = gen_synthetic_sample(seed, args.size)
        if args.unlabeled:
            t = SampleTriplet(shadow=t.shadow, name=t.name)
        write_triplet(root, t)
    print(f"wrote {args.count} {'unlabeled' if args.unlabeled else 'labeled'} samples to {root}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import Trainer

    cfg = load_config(args.config)
    if cfg.semi_supervised and not args.unlabeled:
        raise ConfigError("semi_supervised = true requires --unlabeled DIR")
    labeled = load_dataset(args.data, "labeled")
    if not labeled:
        raise DatasetError(f"{args.data}: no labeled triplets found")
    unlabeled = load_dataset(args.unlabeled, "unlabeled") if args.unlabeled else None
    if cfg.semi_supervised and not unlabeled:
        raise DatasetError(f"{args.unlabeled}: no unlabeled images found")
    try:
        trainer = Trainer(cfg, labeled, unlabeled)
    except ValueError as exc:
        raise DatasetError(str(exc)) from exc
    log_path = log_path_for(args.out)
    trainer.run(log_path=log_path, ckpt_path=args.out)
    last = trainer.history[-1].csv() if trainer.history else "no iterations"
    print(f"checkpoint {args.out}; log {log_path}; last row {last}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .train import infer, load_generator

    cfg, gen = load_generator(args.ckpt)
    img = read_image(args.input)
    if img.ndim != 3:
        raise DatasetError(f"{args.input}: expected a colour (P6) image")
    div = 2 ** cfg.depth
    h, w = img.shape[:2]
    if h % div or w % div:
        raise DatasetError(f"{args.input}: size {h}x{w} is not divisible by {div} (2**depth)")
    states = infer(gen, to_nchw([img]), cfg.N)
    written = []
    for s in states:
        a_path = f"{args.out_prefix}_A{s.step}.pgm"
        o_path = f"{args.out_prefix}_O{s.step}.ppm"
        write_image(a_path, s.attention.data[0, 0])
        write_image(o_path, s.output.data[0].transpose(1, 2, 0))
        written += [a_path, o_path]
    print(" ".join(written))
    return EXIT_OK


def _pairs(pred_dir: Path, gt_dir: Path, extra: Path | None = None) -> list[str]:
    for d in filter(None, (pred_dir, gt_dir, extra)):
        if not d.is_dir():
            raise DatasetError(f"directory {d} not found")
    names = sorted(n.name for n in gt_dir.iterdir() if n.suffix.lower() in (".ppm", ".pgm"))
    for n in names:
        for d in filter(None, (pred_dir, extra)):
            if not (d / n).is_file():
                raise DatasetError(f"{d / n}: missing file")
    if not names:
        raise DatasetError(f"{gt_dir}: no images found")
    return names


def _as_gray(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=2) if img.ndim == 3 else img


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    if args.mode == "detect":
        names = _pairs(pred_dir, gt_dir)
        preds = [binarize_mask(_as_gray(read_image(pred_dir / n)), PRED_THRESHOLD) for n in names]
        gts = [binarize_mask(_as_gray(read_image(gt_dir / n)), GT_THRESHOLD) for n in names]
        for n, p, g in zip(names, preds, gts):
            if p.shape != g.shape:
                raise DatasetError(f"{n}: prediction {p.shape} and ground truth {g.shape} differ")
        rep = detection_report(preds, gts)
        print(f"{'mode':<8}{'images':>8}{'BER':>10}")
        print(f"{'detect':<8}{rep.n_images:>8}{rep.ber:>10.2f}")
        print(f"csv,detect,{rep.n_images},{rep.ber:.6f}")
    else:
        if not args.mask:
            raise CliError("remove mode needs --mask DIR for the shadow/non-shadow split", EXIT_USAGE, "usage")
        mask_dir = Path(args.mask)
        names = _pairs(pred_dir, gt_dir, mask_dir)
        pairs, masks = [], []
        for n in names:
            p, g = read_image(pred_dir / n), read_image(gt_dir / n)
            m = binarize_mask(_as_gray(read_image(mask_dir / n)), GT_THRESHOLD)
            if p.shape != g.shape or p.shape[:2] != m.shape:
                raise DatasetError(f"{n}: dimension mismatch across pred/gt/mask")
            pairs.append((p, g))
            masks.append(m)
        rep = removal_report(pairs, masks)
        print(f"{'mode':<8}{'images':>8}{'S':>10}{'N':>10}{'A':>10}")
        print(f"{'remove':<8}{rep.n_images:>8}{rep.rmse_shadow:>10.2f}{rep.rmse_nonshadow:>10.2f}"
              f"{rep.rmse_all:>10.2f}")
        print(f"csv,remove,{rep.n_images},{rep.rmse_shadow:.6f},{rep.rmse_nonshadow:.6f},{rep.rmse_all:.6f}")
    for w in sorted(set(rep.warnings)):
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_all

    results = run_all()
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        raise CliError(f"selfcheck failed: {', '.join(failed)}", EXIT_NUMERIC, "selfcheck")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "infer": cmd_infer,
            "eval": cmd_eval, "selfcheck": cmd_selfcheck}


def _thread_limit() -> int:
    raw = os.environ.get("ARGAN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise CliError(f"ARGAN_THREADS must be a positive integer, got {raw!r}", EXIT_USAGE, "usage")
    return n


def _fail(exc: CliError) -> int:
    print(f"argan: error kind={exc.kind} code={exc.code} msg={json.dumps(str(exc))}", file=sys.stderr)
    return exc.code


def main(argv: list[str] | None = None) -> int:
    from threadpoolctl import threadpool_limits

    from .train import NumericalError

    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        with threadpool_limits(limits=_thread_limit()):
            return COMMANDS[args.command](args)
    except CliError as exc:
        return _fail(exc)
    except ConfigError as exc:
        return _fail(CliError(str(exc), EXIT_DATA, "config"))
    except (DatasetError, ImageFormatError, CheckpointError, ShapeError) as exc:
        return _fail(CliError(str(exc), EXIT_DATA, "data"))
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _fail(CliError(f"{exc.filename}: {exc.strerror}", EXIT_DATA, "io"))
    except OSError as exc:
        return _fail(CliError(str(exc), EXIT_DATA, "io"))
    except (NumericalError, FloatingPointError) as exc:
        return _fail(CliError(str(exc), EXIT_NUMERIC, "numerical"))


if __name__ == "__main__":
    sys.exit(main())
