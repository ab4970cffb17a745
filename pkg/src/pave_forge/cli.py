"""``pave-forge`` command line.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from pave_forge import __version__, imageio
from pave_forge.attention import (ASPPParams, ChannelAttentionParams, SEParams,
                                  SpatialAttentionParams, as_se, aspp, cbam, se_block)
from pave_forge.box_losses import LOSSES, Box
from pave_forge.core import resize_bilinear
from pave_forge.errors import DataError
from pave_forge.gan_losses import adversarial_loss, parse_score_file
from pave_forge.metrics import (BLOCK_KINDS, count_params_flops, evaluate, parse_detections,
                                parse_ground_truth, peak_flops)
from pave_forge.pipeline import (Manifest, PipelineConfig, augment_and_split, check_ratios,
                                 split_dataset)
from pave_forge.pyramid import DEFAULT_LEVELS, DEFAULT_SIGMA, blend_images, make_weight_map
from pave_forge.scharr import DEFAULT_THRESHOLD, assess

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N,C,H,W integers, got {text!r}") from None
    if len(dims) != 4:
        raise argparse.ArgumentTypeError(f"expected 4 comma-separated dims, got {text!r}")
    return dims


def _box(text: str) -> Box:
    try:
        return Box.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _ratios(text: str) -> tuple[float, ...]:
    try:
        r = tuple(float(v) for v in text.replace(":", ",").split(","))
        check_ratios(r)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return r


def _read_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def cmd_salience(args) -> int:
    if not os.path.isdir(args.indir):
        raise DataError(f"directory not found: {args.indir}")
    paths = imageio.list_images(args.indir)
    if not paths:
        raise DataError(f"no images in {args.indir}")
    for p in paths:
        rep = assess(imageio.to_gray(imageio.load_image(p)), args.threshold)
        print(f"{p}\t{rep.score:.6f}\t{'pass' if rep.passed else 'fail'}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    fg = imageio.load_image(args.fg)
    bg = imageio.load_image(args.bg)
    mask = imageio.to_gray(imageio.load_image(args.mask)) >= 0.5
    if mask.shape != fg.shape[:2]:
        raise DataError(f"mask {args.mask} is {mask.shape[1]}x{mask.shape[0]}, "
                        f"foreground is {fg.shape[1]}x{fg.shape[0]}")
    if fg.ndim == 3 or bg.ndim == 3:
        fg, bg = imageio.to_rgb(fg), imageio.to_rgb(bg)
    bg = resize_bilinear(bg, *fg.shape[:2])
    try:
        out = blend_images(fg, bg, make_weight_map(mask, args.sigma), args.levels)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    imageio.save_image(args.out, out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gan_loss(args) -> int:
    try:
        batch = parse_score_file(_read_text(args.scores))
    except ValueError as exc:
        raise DataError(f"{args.scores}: {exc}") from exc
    print(f"{adversarial_loss(batch):.6f}")
    return EXIT_OK


def _default_reduction(c: int) -> int:
    return max(r for r in range(1, 17) if c % r == 0)


def _build_block(kind: str, shape, seed: int, reduction):
    n, c, h, w = shape
    if min(shape) < 1:
        raise UsageError(f"--shape dims must be >= 1, got {shape}")
    r = _default_reduction(c) if reduction is None else reduction
    if c % r:
        raise UsageError(f"--reduction {r} must divide C={c}")
    rng = np.random.default_rng(seed)
    x = rng.normal(size=shape)
    if kind == "cbam":
        cp, sp = ChannelAttentionParams.random(c, r, rng), SpatialAttentionParams.random(rng)
        return (lambda: cbam(x, cp, sp)), cp.n_params + sp.n_params, r
    if kind == "se":
        p = SEParams.random(c, r, rng)
        return (lambda: se_block(x, p)), p.n_params, r
    ap = ASPPParams.random(c, rng)
    if kind == "aspp":
        return (lambda: aspp(x, ap)), ap.n_params, r
    sp = SEParams.random(c, r, rng)
    return (lambda: as_se(x, sp, ap)), ap.n_params + sp.n_params, r


def cmd_block(args) -> int:
    run, n_params, r = _build_block(args.kind, args.shape, args.seed, args.reduction)
    out = run()
    n, c, h, w = args.shape
    cost = count_params_flops(args.kind, c, h, w, batch=n, reduction=r)
    digest = hashlib.sha256(np.ascontiguousarray(out).tobytes()).hexdigest()[:16]
    print(f"kind: {args.kind}")
    print(f"input shape: {','.join(map(str, args.shape))}")
    print(f"output shape: {','.join(map(str, out.shape))}")
    print(f"checksum: sum={out.sum():.12e} sha256={digest}")
    print(f"params: {n_params}")
    print(f"flops: {cost.flops}")
    return EXIT_OK


def cmd_bench(args) -> int:
    run, _, r = _build_block(args.kind, args.shape, args.seed, args.reduction)
    n, c, h, w = args.shape
    cost = count_params_flops(args.kind, c, h, w, batch=n, reduction=r)
    run()
    t0 = time.perf_counter()
    for _ in range(args.repeats):
        run()
    dt = (time.perf_counter() - t0) / args.repeats
    print(f"kind: {args.kind} shape: {','.join(map(str, args.shape))}")
    print(f"params: {cost.params} flops/pass: {cost.flops}")
    print(f"mean time/pass: {dt:.6f} s  ({1.0 / dt:.2f} passes/s)")
    print(f"achieved: {cost.flops / dt:.4e} FLOP/s")
    if args.clock_ghz is not None:
        peak = peak_flops(args.cores, args.clock_ghz * 1e9, args.ops_per_cycle)
        print("FLOPS = Cores x Clock Speed x Operations Per Cycle = "
              f"{args.cores} x {args.clock_ghz:g} GHz x {args.ops_per_cycle:g} = {peak:.4e}")
        print(f"utilization: {cost.flops / dt / peak:.4%}")
    return EXIT_OK


def cmd_boxloss(args) -> int:
    res = LOSSES[args.kind](args.pred, args.gt)
    print(f"value: {res.value:.9f}")
    print("gradient: " + " ".join(f"{g:.9f}" for g in res.gradient))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        dets = parse_detections(_read_text(args.dets))
        gts = parse_ground_truth(_read_text(args.gts))
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    report = evaluate(dets, gts, args.iou, tn=args.tn, interpolation=args.interp)
    print(report.to_text())
    json_path = args.json or os.path.splitext(args.dets)[0] + ".report.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"json report: {json_path}")
    return EXIT_OK


def cmd_augment(args) -> int:
    try:
        cfg = PipelineConfig.from_file(args.config)
    except OSError as exc:
        raise DataError(f"cannot read config {args.config}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{args.config}: {exc}") from exc
    manifest = augment_and_split(cfg)
    for name, score in manifest.rejected:
        print(f"rejected {name} score={score:.6f}")
    counts = {s: sum(r.split == s for r in manifest.records) for s in ("train", "test", "val")}
    print(f"wrote {len(manifest.records)} images to {cfg.output_dir} "
          f"(train={counts['train']} test={counts['test']} val={counts['val']})")
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = split_dataset(Manifest.read(args.dir), args.dir, args.ratios, args.seed)
    manifest.write(args.dir)
    counts = {s: sum(r.split == s for r in manifest.records) for s in ("train", "test", "val")}
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pave-forge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("salience", help="score images by four-direction Scharr gradients")
    s.add_argument("--in", dest="indir", required=True, help="directory of images")
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help="pass when score >= threshold (default %(default)s)")
    s.set_defaults(func=cmd_salience)

    s = sub.add_parser("fuse", help="multiband-blend a masked foreground onto a background")
    s.add_argument("--fg", required=True, help="foreground (damage) image")
    s.add_argument("--bg", required=True, help="background image, resized to the foreground")
    s.add_argument("--mask", required=True, help="foreground mask image (>= 0.5 is foreground)")
    s.add_argument("--levels", type=int, default=DEFAULT_LEVELS, help="pyramid levels (default %(default)s)")
    s.add_argument("--sigma", type=float, default=DEFAULT_SIGMA, help="mask feather sigma (default %(default)s)")
    s.add_argument("--out", required=True, help="output image path")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("gan-loss", help="adversarial loss from a [real]/[fake] score file")
    s.add_argument("--scores", required=True, help="score file, one float per line")
    s.set_defaults(func=cmd_gan_loss)

    for name, func, helptext in (("block", cmd_block, "seeded forward pass of an attention block"),
                                 ("bench", cmd_bench, "time an attention block forward pass")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--kind", choices=BLOCK_KINDS, required=True, help="block type")
        s.add_argument("--shape", type=_shape, required=True, help="input shape N,C,H,W")
        s.add_argument("--seed", type=int, default=0, help="RNG seed (default %(default)s)")
        s.add_argument("--reduction", type=int, default=None,
                       help="FC reduction ratio (default: largest divisor of C up to 16)")
        s.set_defaults(func=func)
        if name == "bench":
            s.add_argument("--repeats", type=int, default=5, help="timed passes (default %(default)s)")
            s.add_argument("--cores", type=int, default=os.cpu_count() or 1,
                           help="cores for the peak-FLOPS line (default: this machine)")
            s.add_argument("--clock-ghz", type=float, default=None,
                           help="clock speed in GHz; enables the peak-FLOPS line")
            s.add_argument("--ops-per-cycle", type=float, default=1.0,
                           help="floating-point operations per cycle per core (default %(default)s)")

    s = sub.add_parser("boxloss", help="box regression loss value and gradient")
    s.add_argument("--pred", type=_box, required=True, help="predicted box x1,y1,x2,y2")
    s.add_argument("--gt", type=_box, required=True, help="ground-truth box x1,y1,x2,y2")
    s.add_argument("--kind", choices=sorted(LOSSES), default="eiou", help="loss (default %(default)s)")
    s.set_defaults(func=cmd_boxloss)

    s = sub.add_parser("eval", help="precision, recall and mAP of detections")
    s.add_argument("--dets", required=True, help="lines: image_id class conf x1 y1 x2 y2")
    s.add_argument("--gts", required=True, help="lines: image_id class x1 y1 x2 y2")
    s.add_argument("--iou", type=float, default=0.5, help="IoU match threshold (default %(default)s)")
    s.add_argument("--tn", type=int, default=None,
                   help="true-negative count; accuracy is reported only when given")
    s.add_argument("--interp", choices=("all", "11point"), default="all",
                   help="AP interpolation (default %(default)s)")
    s.add_argument("--json", default=None,
                   help="machine-readable report path (default: <dets>.report.json)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("augment", help="run the augmentation pipeline and split the output")
    s.add_argument("--config", required=True, help="key = value config file")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("split", help="(re)split an augmented output directory")
    s.add_argument("--dir", required=True, help="output directory holding manifest.tsv")
    s.add_argument("--ratios", type=_ratios, default=(0.8, 0.1, 0.1),
                   help="train,test,val ratios (default 0.8,0.1,0.1)")
    s.add_argument("--seed", type=int, default=0, help="RNG seed (default %(default)s)")
    s.set_defaults(func=cmd_split)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "iou", None) is not None and not 0 < args.iou < 1:
            raise UsageError("--iou must lie in (0, 1)")
        return args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"pave-forge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
