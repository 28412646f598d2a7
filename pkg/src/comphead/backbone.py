"""Toy feature extractor producing unit-norm feature maps.

The extractor is deliberately small: a fixed, seeded bank of zero-mean
convolution filters, ReLU, 2x2 average pooling, a trainable linear
projection to D channels, then L2 normalization of every feature vector.
Only the projection matrix is trainable; the filter bank is a process-wide
constant so saved models can be reloaded without storing it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError
from .tensor_io import read_tensor

# Fixed bank parameters; baked in so that models serialize as just the
# projection matrix.
FILTER_BANK_SEED = 0x5EED
DEFAULT_CHANNELS = 16
DEFAULT_KERNEL = 5
DEFAULT_POOL = 2
DEFAULT_D = 8

# Pre-normalization norms below this use the fixed fallback direction e1.
ZERO_NORM_EPS = 1e-8


@dataclass(frozen=True)
class Image:
    """Grayscale or RGB image with pixel values in [0, 1]."""

    pixels: np.ndarray  # (height, width) or (height, width, 3), float64

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else self.pixels.shape[2]

    def gray(self) -> np.ndarray:
        """Collapse to a single channel by averaging."""
        if self.pixels.ndim == 2:
            return self.pixels
        return self.pixels.mean(axis=2)


def _validate_pixels(pixels: np.ndarray) -> np.ndarray:
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] not in (1, 3)):
        raise ShapeError(f"image must be HxW or HxWx3, got shape {arr.shape}")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.size and (arr.min() < -1e-9 or arr.max() > 1 + 1e-9):
        raise ValueError("pixel values must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def image_from_array(pixels: np.ndarray) -> Image:
    return Image(_validate_pixels(pixels))


# ---------------------------------------------------------------------------
# PGM / PPM (binary P5 / P6, 8 bit)
# ---------------------------------------------------------------------------

def _read_pnm_tokens(raw: bytes, count: int) -> tuple[list[int], int]:
    """Parse ``count`` whitespace/comment-separated integers after the magic."""
    tokens: list[int] = []
    i = 2  # skip magic
    while len(tokens) < count:
        if i >= len(raw):
            raise FormatError("truncated PNM header")
        c = raw[i:i + 1]
        if c == b"#":
            while i < len(raw) and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        elif c.isdigit():
            j = i
            while j < len(raw) and raw[j:j + 1].isdigit():
                j += 1
            tokens.append(int(raw[i:j]))
            i = j
        else:
            raise FormatError(f"unexpected byte {c!r} in PNM header")
    # exactly one whitespace byte separates the header from the payload
    if i >= len(raw) or not raw[i:i + 1].isspace():
        raise FormatError("missing whitespace before PNM payload")
    return tokens, i + 1


def read_image(path: str | Path) -> Image:
    """Load a binary PGM (P5) or PPM (P6) file, scaled to [0, 1]."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported image magic {magic!r}")
    (width, height, maxval), offset = _read_pnm_tokens(raw, 3)
    if maxval <= 0 or maxval > 255:
        raise FormatError(f"{path}: only 8-bit images supported (maxval={maxval})")
    n_ch = 1 if magic == b"P5" else 3
    n_bytes = width * height * n_ch
    payload = raw[offset:offset + n_bytes]
    if len(payload) != n_bytes:
        raise FormatError(f"{path}: truncated pixel data")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / maxval
    if n_ch == 1:
        arr = arr.reshape(height, width)
    else:
        arr = arr.reshape(height, width, 3)
    return Image(arr)


def write_image(img: Image, path: str | Path) -> None:
    """Write a binary PGM (P5) or PPM (P6) file with maxval 255."""
    arr = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 2:
        header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    else:
        header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(arr.tobytes())
    except OSError as exc:
        raise FormatError(f"cannot write image to {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------

def make_filter_bank(channels: int, kernel: int) -> np.ndarray:
    """Fixed zero-mean filter bank, deterministic for a given (channels, kernel)."""
    rng = np.random.default_rng(FILTER_BANK_SEED)
    filters = rng.standard_normal((channels, kernel, kernel))
    filters -= filters.mean(axis=(1, 2), keepdims=True)
    filters /= np.linalg.norm(filters.reshape(channels, -1), axis=1)[:, None, None]
    return filters


@dataclass
class BackboneParams:
    """Fixed filter bank plus the trainable projection matrix.

    ``projection`` (shape D x C) is the only trainable tensor; the filters
    are immutable after construction.
    """

    filters: np.ndarray       # (C, k, k), constant
    projection: np.ndarray    # (D, C), trainable
    pool_size: int = DEFAULT_POOL

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.float64)
        self.filters.setflags(write=False)
        self.projection = np.asarray(self.projection, dtype=np.float64)
        if not np.all(np.isfinite(self.projection)):
            raise ValueError("projection must be finite-valued")
        if self.projection.shape[1] != self.filters.shape[0]:
            raise ShapeError(
                f"projection columns ({self.projection.shape[1]}) must match "
                f"filter count ({self.filters.shape[0]})"
            )

    @property
    def channels(self) -> int:
        return self.filters.shape[0]

    @property
    def kernel(self) -> int:
        return self.filters.shape[1]

    @property
    def out_dim(self) -> int:
        return self.projection.shape[0]


def default_backbone(d: int = DEFAULT_D, channels: int = DEFAULT_CHANNELS,
                     kernel: int = DEFAULT_KERNEL, pool_size: int = DEFAULT_POOL,
                     seed: int = 0) -> BackboneParams:
    """Backbone with the fixed bank and a seeded random projection."""
    filters = make_filter_bank(channels, kernel)
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal((d, channels)) / np.sqrt(channels)
    return BackboneParams(filters=filters, projection=projection,
                          pool_size=pool_size)


def backbone_from_projection(projection: np.ndarray,
                             kernel: int = DEFAULT_KERNEL,
                             pool_size: int = DEFAULT_POOL) -> BackboneParams:
    """Rebuild a backbone from a stored projection matrix."""
    projection = np.asarray(projection, dtype=np.float64)
    filters = make_filter_bank(projection.shape[1], kernel)
    return BackboneParams(filters=filters, projection=projection,
                          pool_size=pool_size)


def feature_grid_shape(img_h: int, img_w: int, kernel: int = DEFAULT_KERNEL,
                       pool_size: int = DEFAULT_POOL) -> tuple[int, int]:
    """Feature-map (H, W) for a given image size: valid conv then avg pool."""
    ch, cw = img_h - kernel + 1, img_w - kernel + 1
    if ch < pool_size or cw < pool_size:
        raise ShapeError(
            f"image {img_h}x{img_w} too small for kernel {kernel} "
            f"and pool {pool_size}"
        )
    return ch // pool_size, cw // pool_size


def pooled_responses(img: Image, params: BackboneParams) -> np.ndarray:
    """Conv + ReLU + average pool; shape (H, W, C).

    This is the projection-independent part of the extractor, so it can be
    cached per image while the projection is being trained.
    """
    gray = img.gray()
    k = params.kernel
    h, w = feature_grid_shape(gray.shape[0], gray.shape[1], k, params.pool_size)
    windows = np.lib.stride_tricks.sliding_window_view(gray, (k, k))
    conv = np.einsum("ijuv,cuv->ijc", windows, params.filters, optimize=True)
    conv = np.maximum(conv, 0.0)
    p = params.pool_size
    conv = conv[: h * p, : w * p]
    pooled = conv.reshape(h, p, w, p, params.channels).mean(axis=(1, 3))
    return pooled


def project_and_normalize(pooled: np.ndarray,
                          projection: np.ndarray) -> np.ndarray:
    """Apply the linear projection and L2-normalize every feature vector.

    Vectors whose pre-normalization norm is below ZERO_NORM_EPS are mapped
    to the fixed basis direction e1 so blank inputs stay well-defined.
    """
    g = pooled @ projection.T
    norms = np.linalg.norm(g, axis=-1)
    safe = norms >= ZERO_NORM_EPS
    f = np.zeros_like(g)
    f[safe] = g[safe] / norms[safe][..., None]
    f[~safe, 0] = 1.0
    return f


def extract_features(img: Image, params: BackboneParams) -> np.ndarray:
    """Unit-norm feature map of shape (H, W, D) for an image."""
    pooled = pooled_responses(img, params)
    return project_and_normalize(pooled, params.projection)


def projection_gradient(pooled: np.ndarray, projection: np.ndarray,
                        dfeatures: np.ndarray) -> np.ndarray:
    """Backprop a feature-map gradient onto the projection matrix.

    ``pooled`` is the (H, W, C) cache, ``dfeatures`` the (H, W, D) gradient
    with respect to the normalized features. Fallback positions (norm below
    ZERO_NORM_EPS) emit no gradient because their output is constant.
    """
    g = pooled @ projection.T
    norms = np.linalg.norm(g, axis=-1)
    safe = norms >= ZERO_NORM_EPS
    f = np.zeros_like(g)
    f[safe] = g[safe] / norms[safe][..., None]
    radial = np.sum(dfeatures * f, axis=-1, keepdims=True)
    dg = np.zeros_like(g)
    dg[safe] = (dfeatures[safe] - radial[safe] * f[safe]) / norms[safe][..., None]
    return np.einsum("ijd,ijc->dc", dg, pooled, optimize=True)


def load_feature_map(path: str | Path) -> np.ndarray:
    """Load an externally computed (H, W, D) feature map from a CTNS file.

    Vectors are re-normalized on load so the unit-norm invariant holds even
    for approximately-normalized inputs.
    """
    arr = read_tensor(path)
    if arr.ndim != 3:
        raise FormatError(
            f"feature map must be rank 3 [H, W, D], got rank {arr.ndim}"
        )
    arr = arr.astype(np.float64)
    norms = np.linalg.norm(arr, axis=-1)
    safe = norms >= ZERO_NORM_EPS
    out = np.zeros_like(arr)
    out[safe] = arr[safe] / norms[safe][..., None]
    out[~safe, 0] = 1.0
    return out
