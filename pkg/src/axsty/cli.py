"""Command-line entry point: colorize, train, eval, recommend,
gradcheck, bench.

Exit codes for colorize: 1 I/O failure, 2 shape/size violation,
3 checkpoint mismatch. The AXSTY_THREADS environment variable caps
worker threads where a command parallelises over independent images.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ._validation import check_divisible
from .colorspace import LabImage, lab_to_rgb, read_image, rgb_to_lab, write_ppm
from .config import Config, load_config
from .decoder import ColorizationNet
from .metrics import his_score, ssim_of_images
from .recommender import build_ranking, load_manifest, sample_reference
from .tensor import ShapeError, Tensor
from .trainer import load_checkpoint, train_loop

EXIT_IO = 1
EXIT_SHAPE = 2
EXIT_CHECKPOINT = 3


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("AXSTY_THREADS", "1")))
    except ValueError:
        return 1


def _load_cfg(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    if getattr(args, "mode", None):
        cfg.attention_mode = args.mode
    if getattr(args, "repeats", None):
        cfg.repeats = args.repeats
    return cfg.validate()


def cmd_colorize(args) -> int:
    try:
        t_rgb = read_image(args.target, allow_png=args.allow_png)
        r_rgb = read_image(args.reference, allow_png=args.allow_png)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        target = rgb_to_lab(t_rgb)
        reference = rgb_to_lab(r_rgb)
        check_divisible(target.height, target.width)
        if (target.height, target.width) != (reference.height, reference.width):
            raise ShapeError("target and reference sizes differ")
        cfg = _load_cfg(args)
        net = ColorizationNet(cfg, target.height, target.width)
    except (ShapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE

    if args.weights:
        try:
            load_checkpoint(args.weights, net.named_parameters(), allow_extra=True)
        except (OSError, ShapeError) as exc:
            print(f"error: checkpoint mismatch: {exc}", file=sys.stderr)
            return EXIT_CHECKPOINT

    preds = net.forward(target, reference)
    merged = LabImage(L=target.L, ab=Tensor(preds.levels[0].data.copy()))
    write_ppm(args.out, lab_to_rgb(merged))
    if args.all_scales:
        from .tensor import avg_pool2x
        stem = Path(args.out)
        pooled_l = target.L
        for lvl in range(2, len(preds.levels) + 1):
            pooled_l = avg_pool2x(pooled_l)
            scaled = LabImage(L=Tensor(pooled_l.data.copy()),
                              ab=Tensor(preds.levels[lvl - 1].data.copy()))
            write_ppm(stem.with_name(f"{stem.stem}_p{lvl}{stem.suffix}"),
                      lab_to_rgb(scaled))
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    pairs = []
    for lineno, line in enumerate(Path(args.pairs).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            print(f"error: {args.pairs}:{lineno}: expected target<TAB>reference",
                  file=sys.stderr)
            return EXIT_IO
        base = Path(args.pairs).parent
        pairs.append((rgb_to_lab(read_image(base / parts[0])),
                      rgb_to_lab(read_image(base / parts[1]))))
    result = train_loop(pairs, cfg, steps=args.steps, out_dir=args.out,
                        log_path=args.log)
    final = np.mean(result.pixel_history[-10:]) if result.pixel_history else float("nan")
    print(f"trained {args.steps} steps on {len(pairs)} pairs; "
          f"final pixel loss {final:.6f}")
    return 0


def cmd_eval(args) -> int:
    rows = []
    for lineno, line in enumerate(Path(args.pairs).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            print(f"error: {args.pairs}:{lineno}: expected "
                  f"id<TAB>pred<TAB>reference<TAB>target", file=sys.stderr)
            return EXIT_IO
        rows.append(parts)

    base = Path(args.pairs).parent

    def one(row):
        image_id, pred_p, ref_p, target_p = row
        pred = rgb_to_lab(read_image(base / pred_p))
        ref = rgb_to_lab(read_image(base / ref_p))
        target = rgb_to_lab(read_image(base / target_p))
        return image_id, his_score(pred, ref), ssim_of_images(pred, target)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(one, rows))

    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["id", "his", "ssim"])
        for image_id, his, ssim in results:
            writer.writerow([image_id, f"{his:.6f}", f"{ssim:.6f}"])
    finally:
        if args.out:
            out.close()
    return 0


def cmd_recommend(args) -> int:
    entries = load_manifest(args.manifest)
    by_id = {e.image_id: e for e in entries}
    if args.target not in by_id:
        print(f"error: target id {args.target!r} not in manifest", file=sys.stderr)
        return EXIT_IO
    ranking = build_ranking(by_id[args.target], entries)
    rng = np.random.default_rng(args.seed)
    sampled = sample_reference(ranking, rng)
    print(f"top1\t{ranking.top1}")
    print(f"top5\t{','.join(ranking.top5)}")
    print(f"sampled\t{sampled}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite
    checks = run_suite(seed=args.seed, size=args.size, tol=args.tol,
                       inject_bug=args.inject_bug)
    failed = 0
    for name, report in checks:
        status = "ok" if report.passed else "FAIL"
        print(f"{name:24s} {status}  max_rel_err={report.max_rel_err:.3e} "
              f"checked={report.n_checked} excluded={len(report.excluded)}")
        if not report.passed:
            failed += 1
    print(f"{len(checks) - failed}/{len(checks)} gradient checks passed")
    return 0 if failed == 0 else 1


def cmd_bench(args) -> int:
    from .benchmark import fit_loglog_slope, run_benchmark
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = run_benchmark(args.mode, sizes, heads=args.heads, hidden=args.hidden,
                         lattice=args.lattice, repeats=args.repeats)
    writer = csv.writer(sys.stdout)
    writer.writerow(["mode", "m", "flops", "wall_ms"])
    for row in rows:
        writer.writerow([row.mode, row.m, row.flops, f"{row.wall_ms:.3f}"])
    slope = fit_loglog_slope([r.m for r in rows], [r.wall_ms for r in rows])
    print(f"# log-log slope: {slope:.3f}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="axsty",
                                     description="exemplar-guided colourisation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("colorize", help="colourise a target with a reference exemplar")
    p.add_argument("--target", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--weights", help="checkpoint directory")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["axial", "full"])
    p.add_argument("--repeats", type=int, choices=[1, 2])
    p.add_argument("--all-scales", action="store_true",
                   help="also write the coarser predictions")
    p.add_argument("--allow-png", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=cmd_colorize)

    p = sub.add_parser("train", help="desk-scale training run")
    p.add_argument("--pairs", required=True, help="tsv of target<TAB>reference paths")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out", help="checkpoint directory")
    p.add_argument("--log", help="loss log csv path")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions (HIS vs reference, SSIM vs target)")
    p.add_argument("--pairs", required=True,
                   help="tsv of id<TAB>pred<TAB>reference<TAB>target paths")
    p.add_argument("--out", help="csv output path (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recommend", help="rank and sample references for a target")
    p.add_argument("--target", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--inject-bug", action="store_true",
                   help="negative control: add a known-bad gradient")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="span-scaling benchmark of the attention layer")
    p.add_argument("--mode", choices=["axial", "full"], required=True)
    p.add_argument("--sizes", default="8,16,32,64")
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--lattice", type=int, default=64)
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
