"""Model bundle: backbone + kernel dictionary + mixture and occluder banks.

On disk a model is a directory holding ``manifest.json`` plus one CTNS file
per tensor role:

    mu                      (K, D)   unit-norm kernel directions
    occluder_logits         (N, K)
    backbone_projection     (D, C)
    mixture_logits_class_y  (M, H, W, K)   for y = 0..num_classes-1
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import head
from .backbone import BackboneParams, backbone_from_projection, extract_features
from .errors import FormatError, ShapeError
from .head import InferenceResult, MixtureBank, OccluderBank
from .tensor_io import FORMAT_VERSION, ModelManifest, read_tensor, write_tensor
from .vmf import VmfDictionary, compute_likelihood_tensor

MANIFEST_NAME = "manifest.json"


@dataclass
class CompModel:
    backbone: BackboneParams
    dictionary: VmfDictionary
    mixtures: MixtureBank
    occluders: OccluderBank

    @property
    def num_classes(self) -> int:
        return self.mixtures.num_classes

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.mixtures.grid_shape

    def manifest(self) -> ModelManifest:
        h, w = self.mixtures.grid_shape
        paths = {
            "mu": "mu.ctns",
            "occluder_logits": "occluder_logits.ctns",
            "backbone_projection": "backbone_projection.ctns",
        }
        for y in range(self.num_classes):
            paths[f"mixture_logits_class_{y}"] = f"mixture_logits_class_{y}.ctns"
        return ModelManifest(
            format_version=FORMAT_VERSION,
            num_classes=self.num_classes,
            k=self.dictionary.num_kernels,
            m=self.mixtures.num_mixtures,
            n=self.occluders.num_models,
            h=h,
            w=w,
            d=self.dictionary.dim,
            sigma=self.dictionary.sigma,
            occlusion_prior_logodds=self.occluders.prior_logodds,
            tensor_paths=paths,
        )

    def infer(self, features: np.ndarray) -> InferenceResult:
        log_l = compute_likelihood_tensor(features, self.dictionary)
        return head.infer_from_likelihood(log_l, self.mixtures, self.occluders)

    def infer_image(self, img) -> InferenceResult:
        return self.infer(extract_features(img, self.backbone))


def save_model(model: CompModel, directory: str | Path) -> ModelManifest:
    """Write manifest.json and all tensor files into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = model.manifest()
    tensors = {
        "mu": model.dictionary.mu,
        "occluder_logits": model.occluders.logits,
        "backbone_projection": model.backbone.projection,
    }
    for y in range(model.num_classes):
        tensors[f"mixture_logits_class_{y}"] = model.mixtures.logits[y]
    for role, arr in tensors.items():
        manifest.validate_tensor(role, np.asarray(arr))
        write_tensor(arr, directory / manifest.tensor_paths[role])
    (directory / MANIFEST_NAME).write_text(manifest.to_json())
    return manifest


def load_model(directory: str | Path) -> CompModel:
    """Load and validate a model directory written by save_model."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FormatError(f"no {MANIFEST_NAME} in {directory}")
    manifest = ModelManifest.from_json(manifest_path.read_text())

    def load_role(role: str) -> np.ndarray:
        rel = manifest.tensor_paths.get(role)
        if rel is None:
            raise FormatError(f"manifest missing tensor role '{role}'")
        path = directory / rel
        if not path.is_file():
            raise FormatError(f"tensor file for role '{role}' missing: {path}")
        arr = read_tensor(path).astype(np.float64)
        manifest.validate_tensor(role, arr)
        return arr

    mu = load_role("mu")
    norms = np.linalg.norm(mu, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise FormatError("tensor role 'mu' contains a zero direction")
    mu = mu / norms  # re-normalize float32 storage error
    occ_logits = load_role("occluder_logits")
    projection = load_role("backbone_projection")
    mixture_logits = np.stack(
        [load_role(f"mixture_logits_class_{y}")
         for y in range(manifest.num_classes)]
    )
    if manifest.num_classes < 1:
        raise FormatError("manifest declares no classes")

    return CompModel(
        backbone=backbone_from_projection(projection),
        dictionary=VmfDictionary(mu=mu, sigma=manifest.sigma),
        mixtures=MixtureBank(logits=mixture_logits),
        occluders=OccluderBank(
            logits=occ_logits,
            prior_logodds=manifest.occlusion_prior_logodds,
        ),
    )
