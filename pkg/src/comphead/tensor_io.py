"""Dense-tensor binary format (CTNS) and the JSON model manifest.

CTNS layout, fully platform independent:

    bytes 0..3   magic ``43 54 4E 53`` (ASCII "CTNS")
    bytes 4..7   format version, little-endian u32 (currently 1)
    bytes 8..11  rank, little-endian u32 (1..4)
    then         one little-endian u32 per dimension
    then         the payload as little-endian IEEE-754 float32,
                 row-major (last dimension fastest)

Total size is exactly ``12 + 4*rank + 4*prod(dims)``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"CTNS"
FORMAT_VERSION = 1
MAX_RANK = 4


def write_tensor(data: np.ndarray, path: str | Path) -> None:
    """Write ``data`` (rank 1..4) to ``path`` in the CTNS format.

    Values are stored as float32; the input is cast if necessary.
    """
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim < 1 or arr.ndim > MAX_RANK:
        raise ShapeError(f"tensor rank must be in [1, {MAX_RANK}], got {arr.ndim}")
    header = MAGIC + struct.pack("<II", FORMAT_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr).astype("<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise FormatError(f"cannot write tensor to {path}: {exc}") from exc


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a CTNS file back into a float32 array (inverse of write_tensor)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read tensor from {path}: {exc}") from exc
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, rank = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if rank < 1 or rank > MAX_RANK:
        raise FormatError(f"{path}: rank {rank} outside [1, {MAX_RANK}]")
    if len(raw) < 12 + 4 * rank:
        raise FormatError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}I", raw, 12)
    if any(d == 0 for d in dims):
        raise FormatError(f"{path}: zero-sized dimension in {dims}")
    count = int(np.prod(dims))
    expected = 12 + 4 * rank + 4 * count
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload length mismatch, file has {len(raw)} bytes "
            f"but dims {dims} require {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=12 + 4 * rank)
    return data.reshape(dims).copy()


@dataclass
class ModelManifest:
    """Scalar model metadata plus the role -> tensor-file map.

    Stored as ``manifest.json`` next to the CTNS tensors; every declared
    path must resolve to a tensor whose dims match the declared sizes.
    """

    format_version: int
    num_classes: int
    k: int
    m: int
    n: int
    h: int
    w: int
    d: int
    sigma: float
    occlusion_prior_logodds: float
    tensor_paths: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        obj = {
            "format_version": self.format_version,
            "num_classes": self.num_classes,
            "k": self.k,
            "m": self.m,
            "n": self.n,
            "h": self.h,
            "w": self.w,
            "d": self.d,
            "sigma": self.sigma,
            "occlusion_prior_logodds": self.occlusion_prior_logodds,
            "tensor_paths": dict(sorted(self.tensor_paths.items())),
        }
        return json.dumps(obj, indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ModelManifest":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest is not valid JSON: {exc}") from exc
        required = {
            "format_version", "num_classes", "k", "m", "n", "h", "w", "d",
            "sigma", "occlusion_prior_logodds", "tensor_paths",
        }
        missing = required - obj.keys()
        if missing:
            raise FormatError(f"manifest missing fields: {sorted(missing)}")
        mf = cls(
            format_version=int(obj["format_version"]),
            num_classes=int(obj["num_classes"]),
            k=int(obj["k"]),
            m=int(obj["m"]),
            n=int(obj["n"]),
            h=int(obj["h"]),
            w=int(obj["w"]),
            d=int(obj["d"]),
            sigma=float(obj["sigma"]),
            occlusion_prior_logodds=float(obj["occlusion_prior_logodds"]),
            tensor_paths=dict(obj["tensor_paths"]),
        )
        if mf.format_version != FORMAT_VERSION:
            raise FormatError(
                f"unsupported manifest format version {mf.format_version}"
            )
        return mf

    def expected_dims(self, role: str) -> tuple[int, ...] | None:
        """Declared dims for a role, or None for free-shaped roles."""
        if role == "mu":
            return (self.k, self.d)
        if role == "occluder_logits":
            return (self.n, self.k)
        if role == "backbone_projection":
            return None  # (d, c): channel count is carried by the tensor
        if role.startswith("mixture_logits_class_"):
            return (self.m, self.h, self.w, self.k)
        return None

    def validate_tensor(self, role: str, arr: np.ndarray) -> None:
        expected = self.expected_dims(role)
        if expected is not None and tuple(arr.shape) != expected:
            raise ShapeError(
                f"tensor role '{role}' has dims {tuple(arr.shape)}, "
                f"manifest requires {expected}"
            )
        if role == "backbone_projection" and (
            arr.ndim != 2 or arr.shape[0] != self.d
        ):
            raise ShapeError(
                f"tensor role '{role}' has dims {tuple(arr.shape)}, "
                f"manifest requires ({self.d}, C)"
            )
