"""Command-line surface.

Commands: transform, reconstruct, enhance, train, eval, gates-report.
Flags may also come from a ``--config`` file of ``key=value`` lines
(``#`` starts a comment); explicit flags win over the file. The thread
count falls back to the CURVEFEAT_THREADS environment variable.

Exit codes: 0 ok, 2 unreadable input, 3 bad geometry flags, 4 checkpoint
mismatch, 5 metric errors (empty or single-class input), 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from .container import ContainerError, read_archive, write_archive
from .curvelet import CurveletCoeffs, build_geometry, fdct_inverse, fdct_forward
from .errors import (
    BadAngleCount,
    BadChannelCount,
    DimensionTooSmall,
    EmptyInput,
    GeometryTooShallow,
    ShapeMismatch,
    SingleClassInput,
)
from .imageio import psnr, read_image, write_image_cft, write_pgm, write_png
from .masks import band_scale_ranges, write_band_mask_pgms
from .metrics import ScoredItem, accuracy, auc, gates_report
from .pipeline import enhance_image, neutral_params
from .regularizer import RegConfig
from .training import (
    OptimizerConfig,
    history_to_csv,
    load_checkpoint,
    make_synthetic,
    save_checkpoint,
    train,
)

EXIT_BAD_INPUT = 2
EXIT_BAD_GEOMETRY = 3
EXIT_BAD_CHECKPOINT = 4
EXIT_BAD_METRIC = 5


def _load_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


class Settings:
    """Flag values merged over config-file values merged over defaults."""

    def __init__(self, args: argparse.Namespace, config: dict[str, str]):
        self._args = vars(args)
        self._config = config

    def get(self, name: str, default, cast=None):
        value = self._args.get(name.replace("-", "_"))
        if value is None:
            raw = self._config.get(name)
            if raw is None:
                return default
            value = raw
        if cast is not None and value is not None:
            return cast(value)
        return value


def _geometry_for(image: np.ndarray, settings: Settings):
    scales = settings.get("scales", 5, int)
    angles = settings.get("angles", 8, int)
    return build_geometry(image.shape[-2], image.shape[-1], scales, angles)


def _threads(settings: Settings) -> int:
    value = settings.get("threads", None, int)
    if value is not None:
        return value
    env = os.environ.get("CURVEFEAT_THREADS")
    return int(env) if env else 1


def _reg_config(settings: Settings) -> RegConfig:
    constant = settings.get("lambda-l1-constant", None, float)
    return RegConfig(
        loss_min=settings.get("loss-min", 0.2, float),
        loss_max=settings.get("loss-max", 0.5, float),
        lambda_max=settings.get("lambda-max", 0.25, float),
        lambda_cls=settings.get("lambda-cls", 0.1, float),
        lambda_l1_base=settings.get("lambda-l1-base", 2.5e-4, float),
        lambda_l1_increment=settings.get("lambda-l1-increment", 1.25e-4, float),
        increment_every=settings.get("lambda-l1-every", 5, int),
        total_active_target=settings.get("target-active", 63.0, float),
        lambda_l1_constant=constant,
    )


def cmd_transform(settings: Settings) -> int:
    image = read_image(settings.get("input", None))
    geometry = _geometry_for(image, settings)
    out_path = settings.get("out", "coefficients.cft")
    records = []
    header = {
        "kind": "coefficients",
        "height": geometry.height,
        "width": geometry.width,
        "num_scales": geometry.num_scales,
        "angles_at_scale2": geometry.angles_at_scale2,
    }
    records.append((np.zeros(()), header))
    for c in range(3):
        coeffs = fdct_forward(image[c], geometry)
        for i, (arr, info) in enumerate(zip(coeffs.wedges, geometry.wedges)):
            records.append(
                (
                    arr,
                    {
                        "channel": c,
                        "wedge": i + 1,
                        "scale": info.scale,
                        "angle": info.angle,
                    },
                )
            )
    write_archive(out_path, records)
    print("index scale angle height width")
    for i, info in enumerate(geometry.wedges):
        print(f"{i + 1:5d} {info.scale:5d} {info.angle:5d} {info.shape[0]:6d} {info.shape[1]:5d}")
    print(f"wrote {3 * geometry.num_wedges} wedge records to {out_path}")
    return 0


def cmd_reconstruct(settings: Settings) -> int:
    records = read_archive(settings.get("input", None))
    if not records or records[0][1].get("kind") != "coefficients":
        raise ContainerError("input is not a coefficients archive")
    header = records[0][1]
    geometry = build_geometry(
        int(header["height"]),
        int(header["width"]),
        int(header["num_scales"]),
        int(header["angles_at_scale2"]),
    )
    wedges: dict[int, list] = {0: [None] * geometry.num_wedges,
                               1: [None] * geometry.num_wedges,
                               2: [None] * geometry.num_wedges}
    for arr, meta in records[1:]:
        wedges[int(meta["channel"])][int(meta["wedge"]) - 1] = arr
    channels = []
    for c in range(3):
        if any(w is None for w in wedges[c]):
            raise ContainerError(f"archive misses wedges for channel {c}")
        channels.append(fdct_inverse(CurveletCoeffs(geometry, wedges[c])))
    image = np.stack(channels)
    out_path = settings.get("out", "reconstructed.png")
    write_png(out_path, image)
    float_out = settings.get("float-out", None)
    if float_out:
        write_image_cft(float_out, image)
    print(f"wrote {out_path}")
    return 0


def cmd_enhance(settings: Settings) -> int:
    image = read_image(settings.get("input", None))
    ckpt = settings.get("checkpoint", None)
    if ckpt:
        model, _, _ = load_checkpoint(ckpt)
        if (model.geometry.height, model.geometry.width) != image.shape[-2:]:
            raise ShapeMismatch(
                f"checkpoint geometry {model.geometry.height}x{model.geometry.width} "
                f"does not match image {image.shape[-2]}x{image.shape[-1]}"
            )
        params = model.enhance
    else:
        params = neutral_params(_geometry_for(image, settings), seed=settings.get("seed", 0, int))
    stack = enhance_image(image, params, threads=_threads(settings))
    out_path = settings.get("out", "enhanced.cft")
    g = params.geometry
    write_archive(
        out_path,
        [
            (
                stack.astype(np.float32),
                {
                    "kind": "enhanced",
                    "order": "channel-major-bands",
                    "height": g.height,
                    "width": g.width,
                    "num_scales": g.num_scales,
                    "angles_at_scale2": g.angles_at_scale2,
                },
            )
        ],
    )
    print(f"wrote 12x{g.height}x{g.width} stack to {out_path}")
    return 0


def cmd_train(settings: Settings) -> int:
    size = settings.get("size", 64, int)
    samples = settings.get("samples", 400, int)
    seed = settings.get("seed", 0, int)
    dataset = make_synthetic(
        samples,
        size,
        seed,
        num_scales=settings.get("scales", None, int),
        angles_at_scale2=settings.get("angles", 8, int),
        doctor_factor=settings.get("doctor-factor", 1.5, float),
    )
    cfg = _reg_config(settings)
    opt = OptimizerConfig(
        learning_rate=settings.get("lr", 0.002, float),
        weight_decay=settings.get("weight-decay", 1e-4, float),
        batch_size=settings.get("batch-size", 8, int),
    )
    epochs = settings.get("epochs", 30, int)
    state, history = train(
        dataset,
        cfg,
        optimizer=opt,
        epochs=epochs,
        seed=seed,
        hidden=settings.get("hidden", 16, int),
    )
    out_ckpt = settings.get("out", "model.ckpt")
    save_checkpoint(out_ckpt, state)
    history_path = settings.get("history", None)
    if history_path:
        Path(history_path).parent.mkdir(parents=True, exist_ok=True)
        Path(history_path).write_text(history_to_csv(history))
    last = history[-1]
    print(
        f"trained {epochs} epochs: loss {last['loss']:.4f} "
        f"acc {last['accuracy']:.3f}; checkpoint {out_ckpt}"
    )
    return 0


def _items_from_scores_csv(path: str) -> list[ScoredItem]:
    groups: dict[str, ScoredItem] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            gid = row["group"]
            if gid not in groups:
                groups[gid] = ScoredItem(group_id=gid, frame_scores=[], label=int(row["label"]))
            groups[gid].frame_scores.append(float(row["score"]))
    return list(groups.values())


def cmd_eval(settings: Settings) -> int:
    scores_csv = settings.get("scores-csv", None)
    if scores_csv:
        items = _items_from_scores_csv(scores_csv)
    else:
        ckpt = settings.get("checkpoint", None)
        if not ckpt:
            raise EmptyInput("eval needs --scores-csv or --checkpoint")
        model, _, _ = load_checkpoint(ckpt)
        dataset = make_synthetic(
            settings.get("samples", 80, int),
            model.geometry.height,
            settings.get("seed", 1, int),
            num_scales=model.geometry.num_scales,
            angles_at_scale2=model.geometry.angles_at_scale2,
        )
        from .training import predict

        probs, _, _ = predict(model, dataset.images())
        items = [
            ScoredItem(group_id=str(i), frame_scores=[float(p)], label=int(lbl))
            for i, (p, lbl) in enumerate(zip(probs, dataset.labels()))
        ]
    print(f"Acc {accuracy(items)}")
    print(f"AUC {auc(items)}")
    return 0


def cmd_gates_report(settings: Settings) -> int:
    model, _, _ = load_checkpoint(settings.get("checkpoint", None))
    dataset = make_synthetic(
        settings.get("samples", 80, int),
        model.geometry.height,
        settings.get("seed", 1, int),
        num_scales=model.geometry.num_scales,
        angles_at_scale2=model.geometry.angles_at_scale2,
    )
    report = gates_report(model, dataset.images(), dataset.doctored_bands())
    out_csv = settings.get("out-csv", "gates.csv")
    Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
    Path(out_csv).write_text(report.to_csv())
    outputs = [out_csv]
    out_pgm = settings.get("out-pgm", None)
    if out_pgm:
        write_pgm(out_pgm, report.heatmap())
        outputs.append(out_pgm)
    per_sample = settings.get("per-sample-csv", None)
    if per_sample:
        Path(per_sample).write_text(report.per_sample_csv())
        outputs.append(per_sample)
    masks_dir = settings.get("export-masks", None)
    if masks_dir:
        for band in range(1, 5):
            write_band_mask_pgms(model.enhance.masks, band, masks_dir)
        outputs.append(masks_dir)
    ranges = band_scale_ranges(model.geometry.num_scales)[:3]
    for band, (lo, hi) in enumerate(ranges, start=1):
        members = np.array(
            [i for i, w in enumerate(model.geometry.wedges) if lo <= w.scale <= hi]
        )
        try:
            inside, outside = report.band_activation(members, band)
        except EmptyInput:
            continue
        print(f"band {band}: doctored-sample activation in={inside:.4f} out={outside:.4f}")
    print("wrote " + ", ".join(str(o) for o in outputs))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curvefeat")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key=value config file; flags win")
        p.add_argument("--seed", type=int)
        p.add_argument("--scales", type=int)
        p.add_argument("--angles", type=int)
        p.add_argument("--size", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--out")

    p = sub.add_parser("transform", help="image -> wedge coefficients archive")
    p.add_argument("input")
    common(p)

    p = sub.add_parser("reconstruct", help="coefficients archive -> image")
    p.add_argument("input")
    p.add_argument("--float-out", help="also write the float image as a CFT tensor")
    common(p)

    p = sub.add_parser("enhance", help="image -> 12-channel enhanced stack")
    p.add_argument("input")
    p.add_argument("--checkpoint")
    common(p)

    p = sub.add_parser("train", help="train on a synthetic dataset")
    p.add_argument("--samples", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--doctor-factor", type=float)
    p.add_argument("--history", help="write per-epoch history CSV here")
    p.add_argument("--loss-min", type=float)
    p.add_argument("--loss-max", type=float)
    p.add_argument("--lambda-max", type=float)
    p.add_argument("--lambda-cls", type=float)
    p.add_argument("--lambda-l1-base", type=float)
    p.add_argument("--lambda-l1-increment", type=float)
    p.add_argument("--lambda-l1-every", type=int)
    p.add_argument("--lambda-l1-constant", type=float)
    p.add_argument("--target-active", type=float)
    common(p)

    p = sub.add_parser("eval", help="accuracy/AUC of a checkpoint or a scores CSV")
    p.add_argument("--scores-csv")
    p.add_argument("--checkpoint")
    p.add_argument("--samples", type=int)
    common(p)

    p = sub.add_parser("gates-report", help="per-wedge activation statistics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--out-csv")
    p.add_argument("--out-pgm")
    p.add_argument("--per-sample-csv")
    p.add_argument("--export-masks")
    common(p)

    return parser


_COMMANDS = {
    "transform": cmd_transform,
    "reconstruct": cmd_reconstruct,
    "enhance": cmd_enhance,
    "train": cmd_train,
    "eval": cmd_eval,
    "gates-report": cmd_gates_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        settings = Settings(args, config)
        if getattr(args, "input", None) is not None:
            settings._args["input"] = args.input
        return _COMMANDS[args.command](settings)
    except (OSError, ContainerError, BadChannelCount) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (DimensionTooSmall, BadAngleCount, GeometryTooShallow) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_GEOMETRY
    except ShapeMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CHECKPOINT
    except (EmptyInput, SingleClassInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_METRIC
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
