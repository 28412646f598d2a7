"""Synthetic occlusion benchmark: dataset generator and evaluation.

Base images are procedural shape families (one family per class) rendered
on a constant dark background with seeded jitter. Occluders come in four
types — white boxes, per-pixel noise boxes, tiled procedural-texture boxes,
and irregular blob "objects" — and are grown by bisection until the covered
fraction of the object falls inside the requested level band:

    L0: exactly 0%      L1: (20%, 40%]     L2: (40%, 60%]     L3: (60%, 80%]

Evaluation reports per-level/per-type classification accuracy and, for the
correctly classified occluded images, a per-cell occluder-localization ROC
pooled per occluder type across L1-L3.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import (
    DEFAULT_KERNEL,
    DEFAULT_POOL,
    Image,
    extract_features,
    feature_grid_shape,
    read_image,
    write_image,
)
from .errors import FormatError, GenerationError, GeometryError, ShapeError
from .model import CompModel
from .tensor_io import read_tensor, write_tensor

LEVEL_BANDS = {
    "L1": (0.20, 0.40),
    "L2": (0.40, 0.60),
    "L3": (0.60, 0.80),
}
LEVELS = ("L0", "L1", "L2", "L3")
OCCLUDER_TYPES = ("white", "noise", "texture", "object")

# Procedural texture families. Occluder textures always come from
# OCCLUDER_TEXTURE_FAMILIES; background sets either include those families
# ("matched") or replace them with held-out ones ("unmatched"). Families 0,
# 1, 6 and 7 (smooth gradients, grain, flat, stroke clutter) appear in both
# sets: they stand in for the flat, noisy and edge-rich regions every pool
# of natural background images has. Family 7 also fills the irregular
# "object" occluders, so those carry object-like local structure.
OCCLUDER_TEXTURE_FAMILIES = (2, 3)
BACKGROUND_FAMILIES = {
    "matched": (0, 1, 2, 3, 6, 7, 8),
    "unmatched": (0, 1, 4, 5, 6, 7, 9),
}

BACKGROUND_VALUE = 0.08
MIN_IMAGE_SIZE = 24
BISECTION_STEPS = 50
CENTER_ATTEMPTS = 3


@dataclass
class SyntheticSample:
    sample_id: str
    image: Image
    label: int
    object_mask: np.ndarray     # (H, W) bool, the rendered object pixels
    occluder_mask: np.ndarray   # (H, W) bool
    occlusion_level: str        # "L0".."L3"
    occluder_type: str | None   # None for L0
    base_id: str | None = None

    def occluded_fraction(self) -> float:
        total = int(self.object_mask.sum())
        if total == 0:
            return 0.0
        return float(np.sum(self.occluder_mask & self.object_mask)) / total

    def check_band(self) -> None:
        frac = self.occluded_fraction()
        if self.occlusion_level == "L0":
            if self.occluder_mask.any():
                raise GenerationError(
                    f"{self.sample_id}: L0 sample has occluder pixels"
                )
            return
        lo, hi = LEVEL_BANDS[self.occlusion_level]
        if not (lo < frac <= hi):
            raise GenerationError(
                f"{self.sample_id}: occluded fraction {frac:.3f} outside "
                f"{self.occlusion_level} band ({lo}, {hi}]"
            )


# ---------------------------------------------------------------------------
# Procedural shapes (one family per class)
# ---------------------------------------------------------------------------

def _rotated_coords(size: int, cx: float, cy: float, angle: float):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    ca, sa = math.cos(angle), math.sin(angle)
    u = ca * (xx - cx) + sa * (yy - cy)
    v = -sa * (xx - cx) + ca * (yy - cy)
    return u, v


def _bars(size, cx, cy, scale, angle, count, width=4.4, spacing=9.0,
          length_frac=0.85):
    u, v = _rotated_coords(size, cx, cy, angle)
    length = length_frac * size * scale
    mask = np.zeros((size, size), dtype=bool)
    for i in range(count):
        off = (i - (count - 1) / 2.0) * spacing * scale
        mask |= (np.abs(u - off) <= width * scale / 2) & (np.abs(v) <= length / 2)
    return mask


def _rings(size, cx, cy, scale):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r = np.hypot(xx - cx, yy - cy)
    outer = np.abs(r - 12.0 * scale) <= 2.2 * scale
    inner = r <= 4.5 * scale
    return outer | inner

def _cross(size, cx, cy, scale, rot=0.0):
    a = _bars(size, cx, cy, scale, math.pi / 4 + rot, 2, width=5.0,
              spacing=13.0, length_frac=0.95)
    b = _bars(size, cx, cy, scale, -math.pi / 4 + rot, 1, width=5.0,
              length_frac=0.95)
    return a | b


def _squares(size, cx, cy, scale, rot=0.0):
    u, v = _rotated_coords(size, cx, cy, rot)
    mask = np.zeros((size, size), dtype=bool)
    half = 4.2 * scale
    step = 11.0 * scale
    for dv in (-step / 2, step / 2):
        for du in (-step / 2, step / 2):
            mask |= (np.abs(u - du) <= half) & (np.abs(v - dv) <= half)
    return mask


def _triangle(size, cx, cy, scale):
    def filled(s):
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        x, y = (xx - cx) / s, (yy - cy) / s
        return (y >= -11) & (y <= 11 - 1.8 * np.abs(x)) & (np.abs(x) <= 12)
    return filled(scale) & ~filled(scale * 0.6)


def render_class_shape(class_idx: int, size: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Boolean object mask for one jittered instance of a class family.

    Jitter covers position, scale and (where the family is not rotation
    symmetric) orientation, standing in for viewpoint variation.
    """
    cx = size / 2 + rng.uniform(-3.0, 3.0)
    cy = size / 2 + rng.uniform(-3.0, 3.0)
    scale = (size / 32.0) * rng.uniform(0.78, 1.22)
    rot = rng.uniform(-0.25, 0.25)
    family = class_idx % 6
    extra = class_idx // 6
    if family == 0:
        return _bars(size, cx, cy, scale, rot, 3 + extra)
    if family == 1:
        return _squares(size, cx, cy, scale, rot)
    if family == 2:
        return _rings(size, cx, cy, scale)
    if family == 3:
        return _cross(size, cx, cy, scale, rot)
    if family == 4:
        return _bars(size, cx, cy, scale, math.pi / 2 + rot, 3 + extra)
    return _triangle(size, cx, cy, scale)


def generate_dataset(num_classes: int, images_per_class: int, image_size: int,
                     seed: int) -> list[SyntheticSample]:
    """Unoccluded (L0) samples, ``images_per_class`` per shape family."""
    if image_size < MIN_IMAGE_SIZE:
        raise ValueError(f"image_size must be >= {MIN_IMAGE_SIZE}")
    children = np.random.SeedSequence(seed).spawn(num_classes * images_per_class)
    samples = []
    idx = 0
    for label in range(num_classes):
        for _ in range(images_per_class):
            rng = np.random.default_rng(children[idx])
            mask = render_class_shape(label, image_size, rng)
            intensity = 0.8 + rng.uniform(-0.08, 0.12)
            pixels = np.full((image_size, image_size), BACKGROUND_VALUE)
            pixels[mask] = intensity
            samples.append(SyntheticSample(
                sample_id=f"s{idx:04d}",
                image=Image(pixels),
                label=label,
                object_mask=mask,
                occluder_mask=np.zeros_like(mask),
                occlusion_level="L0",
                occluder_type=None,
            ))
            idx += 1
    return samples


# ---------------------------------------------------------------------------
# Textures and backgrounds
# ---------------------------------------------------------------------------

def _bilinear_upsample(coarse: np.ndarray, size: int) -> np.ndarray:
    ch, cw = coarse.shape
    ys = np.linspace(0, ch - 1, size)
    xs = np.linspace(0, cw - 1, size)
    rows = np.empty((ch, size))
    for i in range(ch):
        rows[i] = np.interp(xs, np.arange(cw), coarse[i])
    out = np.empty((size, size))
    for j in range(size):
        out[:, j] = np.interp(ys, np.arange(ch), rows[:, j])
    return out


def render_texture(family: int, size: int,
                   rng: np.random.Generator) -> np.ndarray:
    """One tile of a procedural texture family, values in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if family == 0:      # smooth low-frequency blobs
        coarse = rng.uniform(0.0, 1.0, (5, 5))
        return _bilinear_upsample(coarse, size)
    if family == 1:      # fine grain
        return rng.uniform(0.0, 1.0, (size, size))
    if family == 2:      # oriented grating
        theta, lam = math.radians(28.0), 5.0
        phase = rng.uniform(0, 2 * math.pi)
        s = np.sin(2 * math.pi * (xx * math.cos(theta) + yy * math.sin(theta))
                   / lam + phase)
        return 0.5 + 0.5 * s
    if family == 3:      # tilted checkerboard
        ox, oy = rng.uniform(0, 3.5, 2)
        ca, sa = math.cos(math.radians(30.0)), math.sin(math.radians(30.0))
        u = ca * xx + sa * yy
        v = -sa * xx + ca * yy
        return ((np.floor((u + ox) / 3.5) + np.floor((v + oy) / 3.5)) % 2)
    if family == 4:      # coarser grating, other orientation
        theta, lam = math.radians(125.0), 9.0
        phase = rng.uniform(0, 2 * math.pi)
        s = np.sin(2 * math.pi * (xx * math.cos(theta) + yy * math.sin(theta))
                   / lam + phase)
        return 0.5 + 0.5 * s
    if family == 5:      # concentric rings
        cx, cy = rng.uniform(0, size, 2)
        r = np.hypot(xx - cx, yy - cy)
        return 0.5 + 0.5 * np.sin(2 * math.pi * r / 7.0)
    if family == 6:      # flat fill
        return np.full((size, size), rng.uniform(0.0, 1.0))
    if family == 7:      # stroke clutter: bright bar fragments on dark
        out = np.full((size, size), BACKGROUND_VALUE)
        for _ in range(10):
            cx, cy = rng.uniform(0, size, 2)
            angle = rng.uniform(0, math.pi)
            length = rng.uniform(6, 13)
            width = rng.uniform(2.2, 4.0)
            ca, sa = math.cos(angle), math.sin(angle)
            u = ca * (xx - cx) + sa * (yy - cy)
            v = -sa * (xx - cx) + ca * (yy - cy)
            bar = (np.abs(u) <= width / 2) & (np.abs(v) <= length / 2)
            out[bar] = rng.uniform(0.7, 0.95)
        return out
    if family in (8, 9):  # textured patch on dark ground (silhouette edges)
        inner = (2, 3, 6) if family == 8 else (4, 5, 6)
        out = np.full((size, size), BACKGROUND_VALUE)
        fam = inner[rng.integers(len(inner))]
        tile = render_texture(fam, size, rng)
        half = rng.uniform(0.18, 0.38) * size
        cx, cy = rng.uniform(0.3 * size, 0.7 * size, 2)
        patch = (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= half)
        out[patch] = tile[patch]
        return out
    raise ValueError(f"unknown texture family {family}")


def generate_backgrounds(count: int, image_size: int, seed: int,
                         mode: str = "matched") -> list[Image]:
    """Object-free texture images used to fit the occluder bank."""
    if mode not in BACKGROUND_FAMILIES:
        raise ValueError(f"background mode must be one of "
                         f"{sorted(BACKGROUND_FAMILIES)}, got {mode!r}")
    families = BACKGROUND_FAMILIES[mode]
    children = np.random.SeedSequence(seed).spawn(count)
    images = []
    for i in range(count):
        rng = np.random.default_rng(children[i])
        fam = families[i % len(families)]
        images.append(Image(render_texture(fam, image_size, rng)))
    return images


# ---------------------------------------------------------------------------
# Occluders
# ---------------------------------------------------------------------------

def _square_region(size: int, cx: float, cy: float, u: float) -> np.ndarray:
    half = u * 0.8 * size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= half)


def _blob_profile(rng: np.random.Generator, n_angles: int = 64) -> np.ndarray:
    walk = np.cumsum(rng.standard_normal(n_angles))
    walk -= np.linspace(walk[0], walk[-1], n_angles)  # close the loop
    kernel = np.ones(7) / 7.0
    padded = np.concatenate([walk[-3:], walk, walk[:3]])
    smooth = np.convolve(padded, kernel, mode="valid")
    smooth -= smooth.mean()
    peak = np.max(np.abs(smooth))
    if peak > 1e-9:
        smooth /= peak
    return 1.0 + 0.35 * smooth


def _blob_region(size: int, cx: float, cy: float, u: float,
                 profile: np.ndarray) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r = np.hypot(xx - cx, yy - cy)
    theta = np.mod(np.arctan2(yy - cy, xx - cx), 2 * math.pi)
    n = profile.shape[0]
    pos = theta / (2 * math.pi) * n
    i0 = np.floor(pos).astype(int) % n
    i1 = (i0 + 1) % n
    frac = pos - np.floor(pos)
    radius = profile[i0] * (1 - frac) + profile[i1] * frac
    return r <= u * 0.75 * size * radius


def apply_occluder(sample: SyntheticSample, occluder_type: str,
                   target_level: str, seed: int,
                   texture_seed: int | None = None) -> SyntheticSample:
    """Occlude an L0 sample to the target band with one grown patch.

    The patch geometry (center, blob boundary, final size) depends only on
    ``seed``; the fill pattern for noise/texture/object types is drawn from
    ``texture_seed`` (derived from ``seed`` when not given), so two calls
    sharing the geometry seed produce identical masks.
    """
    if sample.occlusion_level != "L0":
        raise ValueError("apply_occluder requires an L0 sample")
    if occluder_type not in OCCLUDER_TYPES:
        raise ValueError(f"unknown occluder type {occluder_type!r}")
    if target_level not in LEVEL_BANDS:
        raise ValueError(f"target level must be one of {sorted(LEVEL_BANDS)}")
    lo, hi = LEVEL_BANDS[target_level]
    size = sample.image.height
    geom_rng = np.random.default_rng(seed)
    tex_rng = np.random.default_rng(
        texture_seed if texture_seed is not None else seed + 0x7EA5EED
    )
    obj = sample.object_mask
    total = float(obj.sum())
    ys, xs = np.nonzero(obj)
    oy, ox = float(ys.mean()), float(xs.mean())

    region = None
    for _ in range(CENTER_ATTEMPTS):
        cx = np.clip(ox + geom_rng.uniform(-0.2, 0.2) * size, 0, size - 1)
        cy = np.clip(oy + geom_rng.uniform(-0.2, 0.2) * size, 0, size - 1)
        profile = _blob_profile(geom_rng) if occluder_type == "object" else None

        def region_at(u: float) -> np.ndarray:
            if occluder_type == "object":
                return _blob_region(size, cx, cy, u, profile)
            return _square_region(size, cx, cy, u)

        lo_u, hi_u = 0.0, 1.0
        if np.sum(region_at(1.0) & obj) / total <= lo:
            continue
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo_u + hi_u)
            cand = region_at(mid)
            frac = np.sum(cand & obj) / total
            if lo < frac <= hi:
                region = cand
                break
            if frac <= lo:
                lo_u = mid
            else:
                hi_u = mid
        if region is not None:
            break
    if region is None:
        raise GenerationError(
            f"{sample.sample_id}: cannot reach {target_level} band "
            f"({lo}, {hi}] with a {occluder_type} occluder"
        )

    pixels = sample.image.pixels.copy()
    if occluder_type == "white":
        pixels[region] = 1.0
    elif occluder_type == "noise":
        pixels[region] = tex_rng.uniform(0.0, 1.0, int(region.sum()))
    elif occluder_type == "texture":
        fam = OCCLUDER_TEXTURE_FAMILIES[
            tex_rng.integers(len(OCCLUDER_TEXTURE_FAMILIES))
        ]
        tile = render_texture(fam, size, tex_rng)
        pixels[region] = tile[region]
    else:  # irregular "object" blob carrying object-like stroke structure
        fill = render_texture(7, size, tex_rng)
        pixels[region] = fill[region]

    out = SyntheticSample(
        sample_id=f"{sample.sample_id}_{occluder_type}_{target_level}",
        image=Image(pixels),
        label=sample.label,
        object_mask=sample.object_mask.copy(),
        occluder_mask=region,
        occlusion_level=target_level,
        occluder_type=occluder_type,
        base_id=sample.sample_id,
    )
    out.check_band()
    return out


# ---------------------------------------------------------------------------
# Feature-grid ground truth
# ---------------------------------------------------------------------------

def cell_coverage(mask: np.ndarray, kernel: int = DEFAULT_KERNEL,
                  pool: int = DEFAULT_POOL) -> np.ndarray:
    """Per-feature-cell fraction of its receptive-field center patch in ``mask``.

    Cell (i, j)'s full receptive field spans image rows
    ``i*pool .. i*pool + kernel + pool - 2``; the label statistic uses only
    its central ``pool x pool`` patch (the conv-window centers that feed the
    pooling cell), which is where the cell's feature content concentrates.
    """
    mask = np.asarray(mask, dtype=np.float64)
    h, w = feature_grid_shape(mask.shape[0], mask.shape[1], kernel, pool)
    offset = (kernel - 1) // 2
    window = np.lib.stride_tricks.sliding_window_view(mask, (pool, pool))
    return window[offset::pool, offset::pool][:h, :w].mean(axis=(2, 3))


def downsample_mask(mask: np.ndarray, h: int, w: int,
                    kernel: int = DEFAULT_KERNEL,
                    pool: int = DEFAULT_POOL) -> np.ndarray:
    """Majority-vote cell labels: occupied iff strictly more than half."""
    cov = cell_coverage(mask, kernel, pool)
    if cov.shape != (h, w):
        raise ShapeError(
            f"mask downsamples to {cov.shape}, expected {(h, w)}"
        )
    return cov > 0.5


# ---------------------------------------------------------------------------
# ROC and evaluation
# ---------------------------------------------------------------------------

def roc_curve(labels: np.ndarray,
              scores: np.ndarray) -> tuple[np.ndarray, np.ndarray, float] | None:
    """ROC points and trapezoid AUC; None when one class is absent.

    Ties in score are grouped so the curve is the standard non-decreasing
    step function from (0, 0) to (1, 1).
    """
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(~sorted_labels)
    # keep only the last point of every tie group
    last = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    tpr = np.r_[0.0, tp[last] / pos]
    fpr = np.r_[0.0, fp[last] / neg]
    auc = float(np.trapezoid(tpr, fpr))
    return fpr, tpr, auc


@dataclass
class EvalReport:
    accuracy: dict          # {level: {type: {"correct", "total", "accuracy"}}}
    localization: dict      # {type: {"fpr", "tpr", "auc"} | None}

    def to_json(self) -> str:
        return json.dumps(
            {"accuracy": self.accuracy, "localization": self.localization},
            indent=2, sort_keys=True,
        ) + "\n"

    def accuracy_csv(self) -> str:
        cols, values = [], []
        for level in LEVELS:
            types = ["-"] if level == "L0" else list(OCCLUDER_TYPES)
            for t in types:
                cell = self.accuracy.get(level, {}).get(t)
                cols.append(f"{level}:{t}")
                values.append("" if cell is None else repr(cell["accuracy"]))
        filled = [float(v) for v in values if v != ""]
        cols.append("mean")
        values.append(repr(float(np.mean(filled))) if filled else "")
        return ",".join(cols) + "\n" + ",".join(values) + "\n"

    def roc_csv(self) -> str:
        lines = ["occluder_type,fpr,tpr"]
        for t in OCCLUDER_TYPES:
            entry = self.localization.get(t)
            if entry is None:
                continue
            for f, r in zip(entry["fpr"], entry["tpr"]):
                lines.append(f"{t},{f!r},{r!r}")
        return "\n".join(lines) + "\n"

    def cell_accuracy(self, level: str, occluder_type: str | None = None):
        t = "-" if occluder_type is None else occluder_type
        cell = self.accuracy.get(level, {}).get(t)
        return None if cell is None else cell["accuracy"]


def evaluate(model: CompModel, samples: list[SyntheticSample]) -> EvalReport:
    """Accuracy per (level, type) plus occluder-localization ROC per type.

    Localization pools per-cell occlusion scores of correctly classified
    L1-L3 images; cells are scored only where the receptive patch is
    majority object, with ground truth from the occluder-mask majority.
    """
    h, w = model.grid_shape
    counts: dict = {}
    loc_scores: dict[str, list] = {t: [] for t in OCCLUDER_TYPES}
    loc_labels: dict[str, list] = {t: [] for t in OCCLUDER_TYPES}

    kernel = model.backbone.kernel
    pool = model.backbone.pool_size
    for sample in samples:
        try:
            grid = feature_grid_shape(sample.image.height, sample.image.width,
                                      kernel, pool)
        except ShapeError as exc:
            raise GeometryError(str(exc)) from exc
        if grid != (h, w):
            raise GeometryError(
                f"{sample.sample_id}: image yields feature grid {grid}, "
                f"model expects {(h, w)}"
            )
        feats = extract_features(sample.image, model.backbone)
        result = model.infer(feats)
        correct = result.y_hat == sample.label
        t = "-" if sample.occluder_type is None else sample.occluder_type
        cell = counts.setdefault(sample.occlusion_level, {}).setdefault(
            t, {"correct": 0, "total": 0}
        )
        cell["total"] += 1
        cell["correct"] += int(correct)

        if correct and sample.occlusion_level != "L0":
            on_object = downsample_mask(sample.object_mask, h, w, kernel, pool)
            occluded = downsample_mask(sample.occluder_mask, h, w, kernel, pool)
            sel = on_object
            loc_scores[sample.occluder_type].extend(
                result.occ_score[sel].tolist()
            )
            loc_labels[sample.occluder_type].extend(occluded[sel].tolist())

    accuracy = {
        level: {
            t: {
                "correct": c["correct"],
                "total": c["total"],
                "accuracy": c["correct"] / c["total"],
            }
            for t, c in by_type.items()
        }
        for level, by_type in counts.items()
    }
    localization = {}
    for t in OCCLUDER_TYPES:
        if not loc_labels[t]:
            continue
        curve = roc_curve(np.array(loc_labels[t]), np.array(loc_scores[t]))
        localization[t] = None if curve is None else {
            "fpr": curve[0].tolist(),
            "tpr": curve[1].tolist(),
            "auc": curve[2],
        }
    return EvalReport(accuracy=accuracy, localization=localization)


# ---------------------------------------------------------------------------
# Dataset directory layout
# ---------------------------------------------------------------------------

def save_dataset(samples: list[SyntheticSample], directory: str | Path) -> None:
    """samples.jsonl manifest + PGM images + CTNS boolean masks."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        image_rel = f"images/{s.sample_id}.pgm"
        obj_rel = f"masks/{s.sample_id}_object.ctns"
        occ_rel = f"masks/{s.sample_id}_occluder.ctns"
        write_image(s.image, directory / image_rel)
        write_tensor(s.object_mask.astype(np.float32), directory / obj_rel)
        write_tensor(s.occluder_mask.astype(np.float32), directory / occ_rel)
        lines.append(json.dumps({
            "id": s.sample_id,
            "label": s.label,
            "level": s.occlusion_level,
            "occluder_type": s.occluder_type,
            "image": image_rel,
            "object_mask": obj_rel,
            "occluder_mask": occ_rel,
            "base_id": s.base_id,
        }, sort_keys=True))
    (directory / "samples.jsonl").write_text("\n".join(lines) + "\n")


def load_dataset(directory: str | Path) -> list[SyntheticSample]:
    """Load a dataset directory, re-checking every sample's band invariant."""
    directory = Path(directory)
    manifest = directory / "samples.jsonl"
    if not manifest.is_file():
        raise FormatError(f"no samples.jsonl in {directory}")
    samples = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        sample = SyntheticSample(
            sample_id=obj["id"],
            image=read_image(directory / obj["image"]),
            label=int(obj["label"]),
            object_mask=read_tensor(directory / obj["object_mask"]) > 0.5,
            occluder_mask=read_tensor(directory / obj["occluder_mask"]) > 0.5,
            occlusion_level=obj["level"],
            occluder_type=obj["occluder_type"],
            base_id=obj.get("base_id"),
        )
        sample.check_band()
        samples.append(sample)
    return samples


def save_backgrounds(images: list[Image], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        write_image(img, directory / f"bg_{i:03d}.pgm")


def load_backgrounds(directory: str | Path) -> list[Image]:
    directory = Path(directory)
    paths = sorted(directory.glob("*.pgm")) + sorted(directory.glob("*.ppm"))
    if not paths:
        raise FormatError(f"no PGM/PPM background images in {directory}")
    return [read_image(p) for p in paths]
