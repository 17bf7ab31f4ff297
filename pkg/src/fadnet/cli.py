"""Command-line entry points: train, infer, eval, bench and gen-data."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .bench import bench_table, bench_tsv, run_bench
from .data import StereoSample, generate_dataset
from .exceptions import ConfigError, ContractError, FADNetError, FormatError, ShapeError
from .metrics import DisparityMap, DEFAULT_THRESHOLDS, format_table, threshold_metrics
from .network import NetworkConfig, build_fadnet, load_networks, save_networks, variant
from .ops import warp_right_to_left
from .tensor import Tensor
from .training import LossSchedule, OptimizerConfig, predict, train
from .validation import crop, pad_to_multiple

log = logging.getLogger("fadnet")

MANIFEST = "manifest.txt"
MANIFEST_HEADER = "# fadnet synthetic manifest v1\n# name left right disparity\n"
CHECKPOINT = "model.fadw"
CONFIG = "config.txt"
TRAIN_LOG = "log.txt"
TEST_SEED_OFFSET = 1000
WARP_TOLERANCE = 1e-9

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad invocation that should exit with status 2."""


# ---------------------------------------------------------------------------
# dataset directories

def read_manifest(data_dir) -> list[tuple[str, Path, Path, Path]]:
    data_dir = Path(data_dir)
    path = data_dir / MANIFEST
    if not path.is_file():
        raise UsageError(f"{data_dir} has no {MANIFEST}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        name, left, right, disp = parts
        entries.append((name, data_dir / left, data_dir / right, data_dir / disp))
    if not entries:
        raise UsageError(f"{path} lists no samples")
    return entries


def load_dataset(data_dir) -> list[StereoSample]:
    out = []
    for name, left, right, disp in read_manifest(data_dir):
        gt = io.read_disparity(disp)
        values = np.where(gt.valid, gt.values, 0.0).astype(np.float64)
        out.append(StereoSample(io.read_image(left), io.read_image(right), values[None], gt.valid[None], name))
    return out


def write_dataset(out_dir, samples: list[StereoSample]) -> None:
    out_dir = Path(out_dir)
    for sub in ("left", "right", "disp"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        io.write_image(out_dir / "left" / f"{s.name}.png", s.left)
        io.write_image(out_dir / "right" / f"{s.name}.png", s.right)
        gt = np.where(s.valid[0], s.disparity[0], np.inf).astype(np.float32)
        io.write_pfm(out_dir / "disp" / f"{s.name}.pfm", gt)
        lines.append(f"{s.name} left/{s.name}.png right/{s.name}.png disp/{s.name}.pfm")
    (out_dir / MANIFEST).write_text(MANIFEST_HEADER + "\n".join(lines) + "\n")


def load_config(spec: str) -> NetworkConfig:
    """A config file path, or a variant name such as ``tiny`` or ``fadnet++``."""
    path = Path(spec)
    if path.is_file():
        return NetworkConfig.load(path)
    try:
        return variant(spec)
    except ConfigError:
        raise UsageError(f"config {spec!r} is neither a file nor a variant name") from None


# ---------------------------------------------------------------------------
# commands

def cmd_train(args) -> int:
    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    cfg = NetworkConfig.load(args.config)
    if args.synthetic is not None:
        if args.synthetic < 1:
            raise UsageError("--synthetic needs a positive count")
        dataset = generate_dataset(args.synthetic, args.height, args.width, args.max_disparity,
                                   seed=args.seed, mode=args.mode)
    else:
        dataset = load_dataset(args.data)
    test_set = []
    if args.test_synthetic:
        test_set = generate_dataset(args.test_synthetic, args.height, args.width, args.max_disparity,
                                    seed=args.seed + TEST_SEED_OFFSET, mode=args.mode)
    schedule = LossSchedule.default()
    if args.epochs:
        schedule = schedule.with_epochs([int(e) for e in args.epochs.split(",")])
    net_c, net_s = build_fadnet(cfg)
    if args.no_refine:
        net_s = None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(net_c, net_s, dataset, schedule, OptimizerConfig(lr=args.lr, batch_size=args.batch_size),
                   seed=args.seed, test_set=test_set, augment=args.augment)
    result.write(out_dir / TRAIN_LOG)
    save_networks(out_dir / CHECKPOINT, net_c, net_s)
    cfg.save(out_dir / CONFIG)
    final = result.final
    print(f"trained {len(result.records)} epochs: train_epe {final.train_epe:.4f} test_epe {final.test_epe:.4f}")
    print(f"wrote {out_dir / TRAIN_LOG}, {out_dir / CHECKPOINT}, {out_dir / CONFIG}")
    return EXIT_OK


def _infer_one(net_c, net_s, divisor, left_path, right_path) -> np.ndarray:
    left, right = io.read_image(left_path), io.read_image(right_path)
    if left.shape != right.shape:
        raise UsageError(f"image sizes differ: {left_path} is {left.shape[2]}x{left.shape[1]}, "
                         f"{right_path} is {right.shape[2]}x{right.shape[1]}")
    padded, hw = pad_to_multiple(np.stack([left, right]), divisor)
    pred = predict(net_c, net_s, Tensor(padded[:1]), Tensor(padded[1:]))
    return crop(pred[0, 0], hw)


def cmd_infer(args) -> int:
    checkpoint = Path(args.checkpoint)
    config = Path(args.config) if args.config else checkpoint.parent / CONFIG
    if not checkpoint.is_file():
        raise UsageError(f"checkpoint not found: {checkpoint}")
    if not config.is_file():
        raise UsageError(f"config file not found: {config}")
    cfg = NetworkConfig.load(config)
    net_c, net_s = load_networks(checkpoint, cfg)
    left, right, out = Path(args.left), Path(args.right), Path(args.out)
    if left.is_dir():
        if not right.is_dir():
            raise UsageError("left and right must both be files or both be directories")
        out.mkdir(parents=True, exist_ok=True)
        names = sorted(p.name for p in left.glob("*.png"))
        if not names:
            raise UsageError(f"no PNG images in {left}")
        for name in names:
            disp = _infer_one(net_c, net_s, cfg.divisor, left / name, right / name)
            io.write_pfm(out / (Path(name).stem + ".pfm"), disp)
        print(f"wrote {len(names)} disparity maps to {out}")
    else:
        disp = _infer_one(net_c, net_s, cfg.divisor, left, right)
        io.write_pfm(out, disp)
        print(f"wrote {out} ({disp.shape[1]}x{disp.shape[0]}, mean disparity {float(disp.mean()):.4f})")
    return EXIT_OK


_SUFFIX = {"pfm": ".pfm", "kitti": ".png"}


def _disparity_files(directory: Path, fmt: str) -> dict[str, Path]:
    files = [p for p in directory.iterdir() if p.suffix.lower() in (".pfm", ".png")]
    suffixes = {p.suffix.lower() for p in files}
    if len(suffixes) > 1:
        raise UsageError(f"mixed disparity formats in {directory}: {sorted(suffixes)}")
    if suffixes and suffixes != {_SUFFIX[fmt]}:
        raise UsageError(f"{directory} holds {suffixes.pop()} files but --format is {fmt}")
    return {p.stem: p for p in files}


def _read(path: Path, fmt: str) -> DisparityMap:
    payload = path.read_bytes()
    return io.pfm_read(payload) if fmt == "pfm" else io.kitti_png_read(payload)


def warp_self_test(data_dir) -> int:
    rows, worst = [], 0.0
    for name, left, right, disp in read_manifest(data_dir):
        l_img, r_img = io.read_image(left), io.read_image(right)
        gt = io.read_disparity(disp)
        d = np.where(gt.valid, gt.values, 0.0).astype(np.float64)
        warped = warp_right_to_left(Tensor(r_img[None]), Tensor(d[None, None])).data[0]
        err = float(np.abs(warped - l_img)[:, gt.valid].max()) if gt.valid.any() else 0.0
        worst = max(worst, err)
        rows.append({"file": name, "valid": int(gt.valid.sum()), "max_abs_error": err})
    print(format_table(rows, ["file", "valid", "max_abs_error"]), end="")
    ok = worst <= WARP_TOLERANCE
    print(f"warp consistency {'PASS' if ok else 'FAIL'}: max error {worst:.3e} (tolerance {WARP_TOLERANCE:g})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_eval(args) -> int:
    if args.self_test:
        return warp_self_test(args.self_test)
    if not args.pred_dir or not args.gt_dir:
        raise UsageError("eval needs PRED_DIR and GT_DIR (or --self-test DATA_DIR)")
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise UsageError(f"not a directory: {d}")
    preds, gts = _disparity_files(pred_dir, args.format), _disparity_files(gt_dir, args.format)
    unmatched = sorted(set(preds) ^ set(gts))
    for name in unmatched:
        side = "prediction" if name in preds else "ground truth"
        print(f"unmatched {side} file excluded: {name}", file=sys.stderr)
    names = sorted(set(preds) & set(gts))
    if not names:
        print("no matching files to evaluate", file=sys.stderr)
        return EXIT_FAIL
    thresholds = tuple(float(t) for t in args.thresholds.split(",")) if args.thresholds else DEFAULT_THRESHOLDS
    rows = []
    for name in names:
        m = threshold_metrics(_read(preds[name], args.format), _read(gts[name], args.format), thresholds)
        rows.append({"file": name, "epe": m["avg_error"], **m})
    columns = ["file", "epe", "d1_all", "rms"] + [f"bad_{t:g}" for t in thresholds]
    mean_row = {"file": "mean"}
    mean_row.update({c: float(np.mean([r[c] for r in rows])) for c in columns[1:]})
    print(format_table(rows + [mean_row], columns), end="")
    if args.tsv:
        lines = ["\t".join(columns)] + ["\t".join(str(r[c]) if c == "file" else repr(r[c]) for c in columns)
                                        for r in rows + [mean_row]]
        Path(args.tsv).write_text("\n".join(lines) + "\n")
    if unmatched and args.strict:
        return EXIT_FAIL
    return EXIT_OK


def _resolution(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must look like 64x128, got {text!r}") from None
    return h, w


def cmd_bench(args) -> int:
    reports = []
    for spec in args.configs.split(","):
        cfg = load_config(spec.strip())
        reports.append(run_bench(cfg, args.resolution, runs=args.runs, warmup=args.warmup,
                                 seed=args.seed, threads=args.threads, name=spec.strip()))
        log.info("%s median %.4fs", spec, reports[-1].median)
    print(bench_table(reports), end="")
    if args.tsv:
        Path(args.tsv).write_text(bench_tsv(reports))
    return EXIT_OK


def cmd_gendata(args) -> int:
    try:
        samples = generate_dataset(args.count, args.height, args.width, args.max_disparity,
                                   seed=args.seed, mode=args.mode, subpixel=args.subpixel)
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    write_dataset(args.out_dir, samples)
    print(f"wrote {len(samples)} samples and {MANIFEST} to {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fadnet", description="Two-stage stereo disparity networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train RB-NetC and RB-NetS")
    p.add_argument("config", help="network config file (key = value lines)")
    p.add_argument("out_dir", help="directory for log.txt, model.fadw and config.txt")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset directory written by gen-data")
    src.add_argument("--synthetic", type=int, metavar="N", help="train on N generated pairs")
    p.add_argument("--test-synthetic", type=int, default=0, metavar="M",
                   help=f"held-out generated pairs, seeds starting at seed+{TEST_SEED_OFFSET}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--max-disparity", type=float, default=8)
    p.add_argument("--mode", choices=("dots", "boxes"), default="dots")
    p.add_argument("--epochs", help="comma-separated epochs per round (default 20,20,20,30)")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--augment", action="store_true", help="random vertical flips and channel permutations")
    p.add_argument("--no-refine", action="store_true", help="train RB-NetC alone")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict a disparity map")
    p.add_argument("checkpoint")
    p.add_argument("left", help="left image, or a directory of PNGs")
    p.add_argument("right", help="right image, or a directory of PNGs")
    p.add_argument("out", help="output PFM file, or a directory")
    p.add_argument("--config", help="network config (default: config.txt beside the checkpoint)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("pred_dir", nargs="?")
    p.add_argument("gt_dir", nargs="?")
    p.add_argument("--format", choices=("pfm", "kitti"), default="pfm")
    p.add_argument("--strict", action="store_true", help="fail when any file is unmatched")
    p.add_argument("--thresholds", help="comma-separated bad-n thresholds (default 0.5,1,2,4)")
    p.add_argument("--tsv", help="also write the table as tab-separated values")
    p.add_argument("--self-test", metavar="DATA_DIR",
                   help="check that warping each right image by its ground truth reproduces the left")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time forward passes")
    p.add_argument("--configs", default="t,s,m,fadnet++",
                   help="comma-separated config files or variant names")
    p.add_argument("--resolution", type=_resolution, default=(64, 64), help="HxW")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--threads", type=int, default=1, help="BLAS worker threads")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tsv", help="per-run timings as tab-separated values")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-data", help="write a synthetic stereo dataset")
    p.add_argument("out_dir")
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--max-disparity", type=float, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("dots", "boxes"), default="dots")
    p.add_argument("--subpixel", action="store_true")
    p.set_defaults(func=cmd_gendata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fadnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ShapeError as exc:
        print(f"fadnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FADNetError, OSError) as exc:
        print(f"fadnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
