"""Command-line interface: synth, train, eval, localize.

Exit codes: 0 success, 2 usage/input error, 3 training divergence,
4 geometry mismatch. Every command is deterministic given its seeds, and
output directories are guarded by an advisory ``.compnet.lock`` file.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import sys
from pathlib import Path

import numpy as np

from . import bench
from .backbone import read_image
from .errors import (
    CompheadError,
    DivergenceError,
    FormatError,
    GenerationError,
    GeometryError,
    InitError,
    ShapeError,
)
from .head import median_filter_3x3
from .model import load_model, save_model
from .tensor_io import write_tensor
from .trainer import TrainConfig, init_model, train

LOCK_NAME = ".compnet.lock"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_GEOMETRY = 4


@contextlib.contextmanager
def output_lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = open(lock, "x")
    except FileExistsError:
        raise FormatError(
            f"output directory {directory} is locked by {LOCK_NAME}; "
            f"remove it if no other run is active"
        ) from None
    except OSError as exc:
        raise FormatError(f"cannot lock output directory {directory}: {exc}") \
            from exc
    try:
        fd.close()
        yield
    finally:
        lock.unlink(missing_ok=True)


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

SYNTH_DEFAULTS = {
    "num_classes": 2,
    "images_per_class": 10,
    "image_size": 32,
    "seed": 0,
    "occluder_types": list(bench.OCCLUDER_TYPES),
    "levels": ["L1", "L2", "L3"],
    "num_backgrounds": 12,
    "background_texture_mode": "matched",
}


def cmd_synth(args) -> int:
    spec = dict(SYNTH_DEFAULTS)
    if args.spec:
        overrides = _load_json(args.spec)
        unknown = set(overrides) - set(SYNTH_DEFAULTS)
        if unknown:
            raise FormatError(f"unknown synth spec keys: {sorted(unknown)}")
        spec.update(overrides)
    out = Path(args.out)
    with output_lock(out):
        base = bench.generate_dataset(
            spec["num_classes"], spec["images_per_class"],
            spec["image_size"], spec["seed"],
        )
        samples = list(base)
        occ_idx = 0
        for s in base:
            for occ_type in spec["occluder_types"]:
                for level in spec["levels"]:
                    occ_seed = spec["seed"] * 1_000_003 + occ_idx
                    samples.append(bench.apply_occluder(
                        s, occ_type, level, occ_seed
                    ))
                    occ_idx += 1
        bench.save_dataset(samples, out)
        backgrounds = bench.generate_backgrounds(
            spec["num_backgrounds"], spec["image_size"], spec["seed"] + 1,
            spec["background_texture_mode"],
        )
        bench.save_backgrounds(backgrounds, out / "backgrounds")
    n_occluded = len(samples) - len(base)
    print(f"wrote {len(base)} L0 samples, {n_occluded} occluded samples, "
          f"{len(backgrounds)} backgrounds to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_CONFIG_OVERRIDES = ("epochs", "lr", "momentum", "seed", "prior_logodds",
                     "k", "m", "n", "sigma", "d")


def cmd_train(args) -> int:
    cfg_obj = _load_json(args.config) if args.config else {}
    for name in _CONFIG_OVERRIDES:
        value = getattr(args, name)
        if value is not None:
            cfg_obj[name] = value
    if args.freeze_backbone:
        cfg_obj["freeze_backbone"] = True
    try:
        config = TrainConfig.from_json(json.dumps(cfg_obj))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad training config: {exc}") from exc

    samples = bench.load_dataset(args.data)
    train_samples = [s for s in samples if s.occlusion_level == "L0"]
    if not train_samples:
        raise InitError(f"no L0 samples in {args.data}")
    backgrounds = bench.load_backgrounds(args.bg)
    images = [s.image for s in train_samples]
    labels = [s.label for s in train_samples]

    out = Path(args.out)
    with output_lock(out):
        model = init_model(images, labels, backgrounds, config)
        state = train(model, images, labels, config)
        final = state.model(model.backbone)
        save_model(final, out)
        header = "epoch,mean_loss,l_class,l_weight,l_vmf,l_mix,train_accuracy"
        rows = [header] + [
            f"{r['epoch']},{r['mean_loss']!r},{r['l_class']!r},"
            f"{r['l_weight']!r},{r['l_vmf']!r},{r['l_mix']!r},"
            f"{r['train_accuracy']!r}"
            for r in state.history
        ]
        (out / "training_log.csv").write_text("\n".join(rows) + "\n")
    if state.history:
        last = state.history[-1]
        print(f"trained {config.epochs} epochs; final mean loss "
              f"{last['mean_loss']:.4f}, train accuracy "
              f"{last['train_accuracy']:.4f}")
    else:
        print("wrote initialized model (0 epochs)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    model = load_model(args.model)
    samples = bench.load_dataset(args.data)
    out = Path(args.out)
    with output_lock(out.parent if out.parent != Path("") else Path(".")):
        report = bench.evaluate(model, samples)
        out.write_text(report.to_json())
        out.with_suffix(".csv").write_text(report.accuracy_csv())
        out.parent.joinpath("roc.csv").write_text(report.roc_csv())
    for level in bench.LEVELS:
        by_type = report.accuracy.get(level)
        if not by_type:
            continue
        cells = ", ".join(
            f"{t}={c['accuracy']:.3f}" for t, c in sorted(by_type.items())
        )
        print(f"{level}: {cells}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# localize
# ---------------------------------------------------------------------------

def cmd_localize(args) -> int:
    model = load_model(args.model)
    img = read_image(args.image)
    try:
        result = model.infer_image(img)
    except ShapeError as exc:
        raise GeometryError(str(exc)) from exc
    if result.occ_score.shape != model.grid_shape:
        raise GeometryError("feature grid does not match the model")
    out = Path(args.out)
    with output_lock(out):
        scores = {
            "scores": [float(s) for s in result.scores],
            "y_hat": int(result.y_hat),
            "m_star": [int(m) for m in result.m_star],
        }
        (out / "scores.json").write_text(
            json.dumps(scores, indent=2, sort_keys=True) + "\n"
        )
        write_tensor(result.z_map.astype(np.float32), out / "zmap.ctns")
        write_tensor(result.occ_score, out / "occscore.ctns")
        write_tensor(median_filter_3x3(result.occ_score),
                     out / "occscore_med.ctns")
    occluded = float(result.z_map.mean())
    print(f"class {result.y_hat}, occluded cell fraction {occluded:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="comphead",
        description="Occlusion-robust generative classification head",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic occlusion dataset")
    p.add_argument("--spec", help="JSON generation spec (defaults applied)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="initialize and train a model")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--bg", required=True, help="background image directory")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--out", required=True, help="output model directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--prior-logodds", dest="prior_logodds", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--freeze-backbone", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("localize", help="occlusion map for one image")
    p.add_argument("--image", required=True, help="PGM/PPM image")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_localize)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except GeometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except (CompheadError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
