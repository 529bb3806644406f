"""Command line interface.

Subcommands: synth, patch, render, gradcheck, train, eval, ablate, xval.
Exit codes: 0 success, 1 validation error (bad arguments/inputs), 2 runtime
failure.
"""

import argparse
import sys
from pathlib import Path

import numpy as np


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the CLI contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit2(message)


class SystemExit2(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="run config JSON file")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("--out", help="output directory or file")

    parser = _Parser(prog="mmpcqa",
                     description="multi-modal point cloud quality assessment")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic labeled dataset")
    p.add_argument("--contents", type=int, default=4)
    p.add_argument("--types", default="downsample,geom_noise,color_noise,"
                                      "color_quantize")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--points", type=int, default=4096)

    p = sub.add_parser("patch", parents=[common],
                       help="inspect patch-up sub-models of a PLY file")
    p.add_argument("ply", help="input PLY file")
    p.add_argument("--ns", type=int, default=2048, help="points per sub-model")
    p.add_argument("--mode", choices=["strict", "pad"], default="strict")

    p = sub.add_parser("render", parents=[common],
                       help="render one random-view projection to PNG")
    p.add_argument("ply", help="input PLY file")
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--crop", type=int, default=0,
                   help="crop size (0: full canvas)")

    sub.add_parser("gradcheck", parents=[common],
                   help="run the full gradient verification suite")

    p = sub.add_parser("train", parents=[common], help="train on a manifest")
    p.add_argument("--manifest", help="dataset manifest CSV")
    p.add_argument("--contents", help="comma-separated training content ids "
                                      "(default: all)")

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="dataset manifest CSV")
    p.add_argument("--contents", help="comma-separated test content ids "
                                      "(default: all)")

    p = sub.add_parser("ablate", parents=[common], help="run an ablation study")
    p.add_argument("study", choices=["modality", "patching", "counts"])
    p.add_argument("--manifest", help="dataset manifest CSV")

    p = sub.add_parser("xval", parents=[common],
                       help="k-fold cross-validation protocol")
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--manifest", help="dataset manifest CSV")

    return parser


def _load_config(args):
    from .config import RunConfig
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.seeds.global_seed = args.seed
    manifest = getattr(args, "manifest", None)
    if manifest:
        config.manifest = manifest
    return config


def _cmd_synth(args):
    from ..synthdata import build_dataset
    out = args.out or "synthetic"
    manifest = build_dataset(args.contents, args.types.split(","), args.levels,
                             seed=args.seed or 0, out_dir=out,
                             n_points=args.points)
    print(f"wrote {len(manifest.entries)} entries under {out}")
    return 0


def _cmd_patch(args):
    from ..clouds import normalize, patch_up, read_ply
    cloud = read_ply(args.ply)
    subset = patch_up(normalize(cloud, provenance=args.ply), args.ns,
                      mode=args.mode)
    text = subset.to_json()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {subset.n_delta} sub-models of {subset.n_s} points "
              f"to {args.out}")
    else:
        print(text)
    return 0


def _cmd_render(args):
    from ..clouds import ColoredPointCloud, normalize, read_ply
    from ..render import crop_patch, rasterize, sample_camera, save_png
    raw = read_ply(args.ply)
    norm = normalize(raw, provenance=args.ply)
    cloud = ColoredPointCloud(geometry=norm.geometry, color=raw.color)
    cam = sample_camera(args.seed or 0, width=args.width, height=args.height)
    proj = rasterize(cloud, cam)
    pixels = proj.pixels
    if args.crop:
        pixels = crop_patch(proj, args.crop, seed=(args.seed or 0) + 1)
    out = args.out or "view.png"
    save_png(pixels, out)
    print(f"wrote {out}")
    return 0


def _cmd_gradcheck(args):
    from ..verify import run_suite
    results = run_suite(seed=args.seed or 0)
    ok = True
    for r in results:
        flag = "PASS" if r.passed else "FAIL"
        ok = ok and r.passed
        print(f"{flag}  {r.name:28s} max_rel_err={r.max_error:.3e}  "
              f"tol={r.tolerance:g}")
    if not ok:
        raise RuntimeError("gradient suite failed")
    return 0


def _cmd_train(args):
    from ..synthdata import DatasetManifest
    from .training import run_id_for, train
    config = _load_config(args)
    if not config.manifest:
        raise ValueError("train needs --manifest or a config with one")
    manifest = DatasetManifest.load(config.manifest)
    contents = args.contents.split(",") if args.contents \
        else manifest.content_ids()
    out = args.out or str(Path("runs") / run_id_for(config))
    record = train(config, contents, out, manifest=manifest)
    print(f"run {record.run_id}: {len(record.epoch_losses)} epochs, "
          f"final loss {record.epoch_losses[-1]:.6g}, "
          f"best epoch {record.best_epoch}, saved under {record.run_dir}")
    return 0


def _cmd_eval(args):
    from ..evalkit import evaluate_run
    from ..synthdata import DatasetManifest
    from .training import evaluate
    config = _load_config(args)
    if not config.manifest:
        raise ValueError("eval needs --manifest or a config with one")
    manifest = DatasetManifest.load(config.manifest)
    contents = args.contents.split(",") if args.contents \
        else manifest.content_ids()
    ps = evaluate(args.checkpoint, config, contents, manifest=manifest)
    report = evaluate_run([ps])
    m = report.mean
    print(f"n={ps.n} SRCC={m.srcc:.4f} KRCC={m.krcc:.4f} "
          f"PLCC={m.plcc:.4f} RMSE={m.rmse:.4f}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "report.json").write_text(report.to_json())
        (Path(args.out) / "report.csv").write_text(report.to_csv())
    return 0


def _cmd_ablate(args):
    from .ablation import ablate
    config = _load_config(args)
    if not config.manifest:
        raise ValueError("ablate needs --manifest or a config with one")
    out = args.out or f"ablation_{args.study}"
    rows = ablate(config, args.study, out)
    for row in rows:
        print(f"{row['variant']:14s} SRCC={row['srcc']:.4f} "
              f"PLCC={row['plcc']:.4f} RMSE={row['rmse']:.4f}")
    return 0


def _cmd_xval(args):
    from .training import cross_validate
    config = _load_config(args)
    if not config.manifest:
        raise ValueError("xval needs --manifest or a config with one")
    out = args.out or "xval"
    report, _, plan = cross_validate(config, args.k, out)
    for i, m in enumerate(report.fold_metrics):
        print(f"fold {i} (test={','.join(map(str, plan.folds[i]))}): "
              f"SRCC={m.srcc:.4f} PLCC={m.plcc:.4f} RMSE={m.rmse:.4f}")
    m = report.mean
    print(f"mean: SRCC={m.srcc:.4f} KRCC={m.krcc:.4f} PLCC={m.plcc:.4f} "
          f"RMSE={m.rmse:.4f}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth, "patch": _cmd_patch, "render": _cmd_render,
    "gradcheck": _cmd_gradcheck, "train": _cmd_train, "eval": _cmd_eval,
    "ablate": _cmd_ablate, "xval": _cmd_xval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
