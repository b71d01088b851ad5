"""Command-line front end: generate / train / eval / infer / gradcheck.

Exit codes: 0 success, 1 verification failure (gradcheck), 2 usage or
configuration error, 3 numerical divergence during training.
"""

import argparse
import csv
import dataclasses
import json
import os
import struct
import sys
import time

import numpy as np

from . import __version__, gradcheck, runconfig
from .datagen import generate_dataset
from .dataset_io import DatasetReader
from .errors import (
    ConfigError,
    MonosurfError,
    TrainingDivergedError,
)
from .geometry import e3d_metric
from .network import build_model, load_checkpoint, save_checkpoint
from .trainer import (
    base_surface_of,
    evaluate,
    loss_config_for_combo,
    noise_sweep,
    train,
)

SURFACE_MAGIC = b"HDMS"
SURFACE_VERSION = 1


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args):
    values = runconfig.parse_config_file(args.config) if args.config else {}
    overrides = {}
    for flag, key in (
        ("states", "num_states"),
        ("grid_side", "grid_side"),
        ("image_side", "image_side"),
        ("poses", "num_poses"),
        ("lights", "num_lights"),
        ("period", "split_period"),
        ("test_len", "split_test_len"),
        ("texture_dir", "texture_dir"),
        ("seed", "seed"),
    ):
        val = getattr(args, flag)
        if val is not None:
            overrides[key] = val
    cfg = runconfig.scene_config(values, overrides)
    started = runconfig.timestamp()
    counts = generate_dataset(cfg, args.out)
    print(
        f"wrote {args.out}: {counts['samples']} samples = {counts['states']} states"
        f" x {counts['textures']} textures x {counts['lights']} lights x "
        f"{counts['cameras']} cameras"
    )
    print(f"split: {counts['train']} train / {counts['test']} test")
    runconfig.write_manifest(
        args.out,
        "generate",
        cfg,
        outputs={"dataset": runconfig.file_sha256(args.out), "counts": counts},
        seed=cfg.seed,
        started_at=started,
    )
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _write_history_csv(path, history):
    fields = ["epoch", "loss", "loss_3d", "loss_iso", "loss_cont"]
    if any("e3d_test" in row for row in history):
        fields.append("e3d_test")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields, restval="")
        writer.writeheader()
        for row in history:
            writer.writerow(row)


def cmd_train(args):
    values = runconfig.parse_config_file(args.config) if args.config else {}
    loss_overrides = {}
    loss_cfg = runconfig.loss_config(values, loss_overrides)
    if args.losses:
        combo = [part.strip() for part in args.losses.split(",") if part.strip()]
        loss_cfg = loss_config_for_combo(loss_cfg, combo)
    train_overrides = {}
    for flag in (
        "epochs", "batch_size", "lr", "seed", "precision", "optimizer",
        "eval_period",
    ):
        val = getattr(args, flag)
        if val is not None:
            train_overrides[flag] = val
    tcfg = runconfig.train_config(values, train_overrides, loss=loss_cfg)

    started = runconfig.timestamp()
    with DatasetReader(args.data) as ds:
        model_overrides = {
            "input_side": ds.image_side,
            "grid_side": ds.grid_side,
            "dtype": tcfg.precision,
            "seed": tcfg.seed,
        }
        if args.widths:
            model_overrides["widths"] = tuple(
                int(w) for w in args.widths.split(",")
            )
        mcfg = runconfig.model_config(values, model_overrides)
        model = build_model(mcfg, base_surface_of(ds))
        print(
            f"training {mcfg.widths} model ({model.param_count} parameters) "
            f"for {tcfg.epochs} epochs on {len(ds.indices_of_split('train'))} samples"
        )
        log_path = args.out + ".train.log"
        with open(log_path, "w", encoding="utf-8") as log_file:

            def log(row):
                line = (
                    f"epoch {row['epoch']:>3}: loss {row['loss']:.5f} "
                    f"(3d {row['loss_3d']:.5f}, iso {row['loss_iso']:.5f}, "
                    f"cont {row['loss_cont']:.5f})"
                )
                if "e3d_test" in row:
                    line += f" e3d_test {row['e3d_test']:.5f}"
                print(line)
                log_file.write(line + "\n")
                log_file.flush()

            model, history = train(model, ds, tcfg, log=log)
        steps = tcfg.epochs * (
            (len(ds.indices_of_split("train")) + tcfg.batch_size - 1)
            // tcfg.batch_size
        )
        dataset_hash = runconfig.file_sha256(args.data)
    save_checkpoint(model, args.out, step=steps)
    history_path = args.out + ".history.csv"
    _write_history_csv(history_path, history)
    runconfig.write_manifest(
        args.out,
        "train",
        {"train": tcfg, "model": mcfg},
        inputs={"dataset": dataset_hash},
        outputs={
            "checkpoint": runconfig.file_sha256(args.out),
            "history_csv": history_path,
            "train_log": log_path,
            "final_loss": history[-1]["loss"],
        },
        seed=tcfg.seed,
        started_at=started,
    )
    print(f"wrote {args.out} (final loss {history[-1]['loss']:.5f})")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _print_report(report):
    print(
        f"{report.split} split: e3d = {report.e3d:.5f} +- {report.sigma:.5f} "
        f"({report.n_frames} frames, align={report.align})"
    )
    print(f"inference: {report.ms_per_frame:.2f} ms/frame")
    print(f"  timing method: {report.timing_method}")
    if report.loss_breakdown:
        parts = ", ".join(f"{k} {v:.5f}" for k, v in report.loss_breakdown.items())
        print(f"loss breakdown: {parts}")
    print(f"mean prediction Laplacian: {report.mean_laplacian:.5f}")
    for row in report.table_rows():
        if row["group"] != "overall":
            print(
                f"  {row['group']:<20} e3d {row['e3d']:.5f} "
                f"+- {row['sigma']:.5f}  (n={row['count']})"
            )


def cmd_eval(args):
    started = runconfig.timestamp()
    with DatasetReader(args.data) as ds:
        model, _, _ = load_checkpoint(
            args.checkpoint,
            expect_grid_side=ds.grid_side,
            expect_input_side=ds.image_side,
        )
        report = evaluate(model, ds, split=args.split, align=not args.no_align)
        _print_report(report)
        rows = report.table_rows()
        if args.noise:
            fractions = [float(x) for x in args.noise.split(",") if x.strip() != ""]
            sweep = noise_sweep(model, ds, fractions, seed=args.seed or 0,
                                split=args.split, align=not args.no_align)
            for entry in sweep:
                print(
                    f"  noise {entry['fraction']:.3f}: e3d {entry['e3d']:.5f} "
                    f"+- {entry['sigma']:.5f}"
                )
                rows.append(
                    {
                        "group": f"noise:{entry['fraction']}",
                        "e3d": entry["e3d"],
                        "sigma": entry["sigma"],
                        "count": report.n_frames,
                    }
                )
        dataset_hash = runconfig.file_sha256(args.data)
    out = args.out or (args.checkpoint + ".eval.csv")
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["group", "e3d", "sigma", "count"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    runconfig.write_manifest(
        out,
        "eval",
        {
            "split": args.split,
            "align": not args.no_align,
            "noise": args.noise,
            "ms_per_frame": report.ms_per_frame,
            "timing_method": report.timing_method,
        },
        inputs={
            "dataset": dataset_hash,
            "checkpoint": runconfig.file_sha256(args.checkpoint),
        },
        outputs={"report_csv": out},
        seed=args.seed,
        started_at=started,
    )
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def write_surface_file(path, surface):
    """HDMS: magic, u16 version, u16 grid side, raw little-endian float32."""
    surface = np.ascontiguousarray(surface, dtype="<f4")
    g = surface.shape[0]
    with open(path, "wb") as f:
        f.write(SURFACE_MAGIC)
        f.write(struct.pack("<HH", SURFACE_VERSION, g))
        f.write(surface.tobytes())


def read_surface_file(path):
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) < 8 or head[:4] != SURFACE_MAGIC:
            raise MonosurfError(f"{path}: not a surface file")
        version, g = struct.unpack("<HH", head[4:])
        if version != SURFACE_VERSION:
            raise MonosurfError(f"{path}: unsupported surface version {version}")
        data = np.frombuffer(f.read(g * g * 3 * 4), dtype="<f4")
    return data.reshape(g, g, 3).astype(np.float32)


def write_surface_obj(path, surface):
    """Plain-text polygon export: vertices plus grid-cell triangles."""
    surface = np.asarray(surface)
    g = surface.shape[0]
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# surface grid {g}x{g}\n")
        for row in surface.reshape(-1, 3):
            f.write(f"v {row[0]:.6f} {row[1]:.6f} {row[2]:.6f}\n")
        for i in range(g - 1):
            for j in range(g - 1):
                a = i * g + j + 1
                b = (i + 1) * g + j + 1
                c = i * g + j + 2
                d = (i + 1) * g + j + 2
                f.write(f"f {a} {b} {c}\n")
                f.write(f"f {b} {d} {c}\n")


def _load_input_image(path, expect_side):
    if path.endswith(".npy"):
        img = np.load(path)
    else:
        raw = np.fromfile(path, dtype=np.uint8)
        side = int(np.sqrt(raw.size / 3))
        if side * side * 3 != raw.size:
            raise ConfigError(f"{path}: raw image is not square RGB")
        img = raw.reshape(side, side, 3)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] != img.shape[1]:
        raise ConfigError(f"{path}: expected square [S,S,3] image, got {img.shape}")
    if img.shape[0] != expect_side:
        raise ConfigError(
            f"{path}: image side {img.shape[0]} does not match the model's "
            f"{expect_side}"
        )
    if img.dtype == np.uint8:
        img = img.astype(np.float32) / 255.0
    return np.clip(img.astype(np.float32), 0.0, 1.0)


def cmd_infer(args):
    started = runconfig.timestamp()
    model, _, _ = load_checkpoint(args.checkpoint)
    gt = None
    inputs = {"checkpoint": runconfig.file_sha256(args.checkpoint)}
    if args.image:
        img = _load_input_image(args.image, model.cfg.input_side)
        inputs["image"] = runconfig.file_sha256(args.image)
    elif args.data is not None and args.index is not None:
        with DatasetReader(args.data) as ds:
            if ds.image_side != model.cfg.input_side:
                raise ConfigError(
                    f"dataset image side {ds.image_side} does not match the "
                    f"model's {model.cfg.input_side}"
                )
            raw, gt = ds.read_sample(args.index)
        img = raw.astype(np.float32) / 255.0
        inputs["dataset"] = runconfig.file_sha256(args.data)
    else:
        raise ConfigError("provide --image or both --data and --index")
    batch = img.transpose(2, 0, 1)[None]
    t0 = time.perf_counter()
    surface = model.predict(batch)[0]
    elapsed_ms = (time.perf_counter() - t0) * 1e3
    write_surface_file(args.out, surface)
    print(f"wrote {args.out} ({os.path.getsize(args.out)} bytes) "
          f"in {elapsed_ms:.2f} ms")
    outputs = {"surface": runconfig.file_sha256(args.out)}
    if args.obj:
        write_surface_obj(args.obj, surface)
        outputs["obj"] = runconfig.file_sha256(args.obj)
        print(f"wrote {args.obj}")
    if gt is not None:
        e3d, _, _ = e3d_metric(surface[None], gt[None].astype(np.float64))
        print(f"e3d vs stored ground truth: {e3d:.5f}")
        outputs["e3d_vs_gt"] = e3d
    runconfig.write_manifest(
        args.out,
        "infer",
        {"inference_ms": elapsed_ms},
        inputs=inputs,
        outputs=outputs,
        started_at=started,
    )
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def cmd_gradcheck(args):
    if not args.all and not args.op:
        raise ConfigError("provide --op NAME or --all")
    names = gradcheck.available_ops() if args.all else [args.op]
    results = []
    for name in names:
        res = gradcheck.run_check(name, trials=args.trials, seed=args.seed or 0)
        print(res.line())
        results.append(res)
    failures = [r for r in results if not r.passed]
    if failures:
        worst = max(failures, key=lambda r: r.worst_rel / r.tolerance)
        print(
            f"FAILED: {len(failures)}/{len(results)} ops; worst {worst.op} "
            f"rel {worst.worst_rel:.3e} (tol {worst.tolerance:.0e})"
        )
        return 1
    print(f"all {len(results)} ops passed at {args.trials} trials")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="monosurf",
        description="Single-image deforming-surface regression toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic dataset container")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--states", type=int)
    p.add_argument("--grid-side", dest="grid_side", type=int)
    p.add_argument("--image-side", dest="image_side", type=int)
    p.add_argument("--poses", type=int)
    p.add_argument("--lights", type=int)
    p.add_argument("--period", type=int)
    p.add_argument("--test-len", dest="test_len", type=int)
    p.add_argument("--texture-dir", dest="texture_dir",
                   help="directory with <name>.npy or <name>.rgb textures")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--losses", help="comma list from {3d, iso, cont}")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", choices=["float32", "float64"])
    p.add_argument("--optimizer", choices=["adam", "sgd_momentum"])
    p.add_argument("--widths", help="comma list of encoder widths")
    p.add_argument("--eval-period", dest="eval_period", type=int,
                   help="epochs between mid-train test evaluations")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--noise", help="comma list of salt-pepper fractions")
    p.add_argument("--no-align", dest="no_align", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="regress a surface from one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", help=".npy [S,S,3] or raw RGB bytes")
    p.add_argument("--data")
    p.add_argument("--index", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--obj", help="also write a plain-text polygon file")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference verification suites")
    p.add_argument("--op", choices=gradcheck.available_ops())
    p.add_argument("--all", action="store_true")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (MonosurfError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
