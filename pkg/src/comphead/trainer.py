"""Initialization and end-to-end gradient training of the classification head.

The trainable set is {backbone projection, kernel directions, mixture
logits}; the occluder bank is fit once from background images and then
frozen. Kernel directions are kept as unconstrained raw vectors that are
normalized inside the forward pass, and mixture coefficients as logits
mapped through a normalized exponential, so plain SGD steps preserve the
unit-norm and simplex invariants exactly.

The training loss is

    L = L_class + g1 * L_weight + g2 * L_vmf + g3 * L_mix

with L_class the cross-entropy over per-cell-averaged class scores,
L_weight the squared norm of the projection, L_vmf the negative best
cosine summed over positions (pulls kernels toward the features), and
L_mix the negative object-model log likelihood over the cells that the
forward pass decided are not occluded, for the true class's winning
mixture. Discrete decisions (winning mixture, occlusion cells, winning
occluder) are treated as constants of the backward pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .backbone import (
    ZERO_NORM_EPS,
    BackboneParams,
    Image,
    default_backbone,
    extract_features,
    pooled_responses,
)
from .errors import DivergenceError, InitError
from .head import (
    MixtureBank,
    OccluderBank,
    log_simplex,
    logsumexp,
    occluder_reduced,
    reduce_likelihood,
)
from .model import CompModel
from .vmf import VmfDictionary, spherical_cluster

LAPLACE_SMOOTHING = 1e-2

# Radius of the raw (pre-normalization) kernel-direction storage at the
# start of training. The normalized directions are what the model uses, so
# this only sets how far one SGD step can rotate a kernel: the tangential
# step shrinks as 1/radius^2. At radius 1 the per-image updates overshoot
# and the dictionary orbits instead of refining.
MU_RAW_RADIUS = 8.0


@dataclass
class TrainConfig:
    gamma1: float = 0.1
    gamma2: float = 5.0
    gamma3: float = 1.0
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 60
    seed: int = 0
    freeze_backbone: bool = False
    prior_logodds: float = 0.0
    k: int = 24
    m: int = 4
    n: int = 5
    sigma: float = 30.0
    d: int = 8

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if min(self.gamma1, self.gamma2, self.gamma3) < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        obj = json.loads(text)
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class TrainableParams:
    """The gradient-updated tensors; raw (pre-constraint) storage."""

    mu_raw: np.ndarray          # (K, D)
    mixture_logits: np.ndarray  # (Y, M, H, W, K)
    projection: np.ndarray      # (D, C)

    def copy(self) -> "TrainableParams":
        return TrainableParams(
            mu_raw=self.mu_raw.copy(),
            mixture_logits=self.mixture_logits.copy(),
            projection=self.projection.copy(),
        )


@dataclass
class TrainState:
    params: TrainableParams
    occluders: OccluderBank
    config: TrainConfig
    velocity: dict[str, np.ndarray]
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    def model(self, backbone_template: BackboneParams) -> CompModel:
        """Assemble a CompModel view with the invariants re-established."""
        mu = self.params.mu_raw / np.linalg.norm(
            self.params.mu_raw, axis=1, keepdims=True
        )
        backbone = BackboneParams(
            filters=backbone_template.filters,
            projection=self.params.projection.copy(),
            pool_size=backbone_template.pool_size,
        )
        return CompModel(
            backbone=backbone,
            dictionary=VmfDictionary(mu=mu, sigma=self.config.sigma),
            mixtures=MixtureBank(logits=self.params.mixture_logits.copy()),
            occluders=self.occluders,
        )


# ---------------------------------------------------------------------------
# Forward / backward for a single image
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    """Everything backward() needs from one image's forward pass."""

    y: int
    pooled: np.ndarray | None
    features: np.ndarray
    feat_norms: np.ndarray
    feat_safe: np.ndarray
    mu: np.ndarray
    mu_norms: np.ndarray
    cos: np.ndarray               # (H, W, K) = features @ mu.T
    delta: np.ndarray             # (H, W, K) log_l minus per-position max
    log_alpha: np.ndarray         # (Y, M, H, W, K)
    obj: np.ndarray               # (Y, M, H, W) reduced object planes
    occ: np.ndarray               # (H, W) reduced occluder plane (with prior)
    occ_index: np.ndarray         # (H, W)
    m_star: np.ndarray            # (Y,)
    z_up: np.ndarray              # (H, W) occlusion cells of (y, m_up)
    k_star: np.ndarray            # (H, W) best kernel per position
    scores_norm: np.ndarray       # (Y,) scores / (H*W)
    loss: float
    parts: dict[str, float]
    y_hat: int


def _forward(params: TrainableParams, occluders: OccluderBank,
             config: TrainConfig, y: int,
             pooled: np.ndarray | None = None,
             features: np.ndarray | None = None) -> ForwardCache:
    if features is None:
        g = pooled @ params.projection.T
        feat_norms = np.linalg.norm(g, axis=-1)
        feat_safe = feat_norms >= ZERO_NORM_EPS
        features = np.zeros_like(g)
        features[feat_safe] = g[feat_safe] / feat_norms[feat_safe][..., None]
        features[~feat_safe, 0] = 1.0
    else:
        feat_norms = np.ones(features.shape[:2])
        feat_safe = np.ones(features.shape[:2], dtype=bool)

    mu_norms = np.linalg.norm(params.mu_raw, axis=1)
    if np.any(mu_norms < 1e-12):
        raise DivergenceError("kernel direction collapsed to zero")
    mu = params.mu_raw / mu_norms[:, None]

    cos = features @ mu.T
    log_l = config.sigma * cos
    base, delta = reduce_likelihood(log_l)
    k_star = np.argmax(cos, axis=-1)

    log_alpha = log_simplex(params.mixture_logits)
    obj = logsumexp(log_alpha + delta, axis=-1)
    occ, occ_index = occluder_reduced(delta, occluders)

    num_classes = params.mixture_logits.shape[0]
    if not 0 <= y < num_classes:
        raise IndexError(f"label {y} out of range for {num_classes} classes")
    h, w = base.shape
    reduced_scores = np.sum(np.maximum(obj, occ), axis=(2, 3))
    m_star = np.argmax(reduced_scores, axis=1)
    per_class = reduced_scores[np.arange(num_classes), m_star]
    scores = per_class + float(np.sum(base))
    scores_norm = scores / (h * w)
    y_hat = int(np.argmax(per_class))

    l_class = float(logsumexp(scores_norm, axis=0) - scores_norm[y])
    l_weight = float(np.sum(params.projection ** 2))
    l_vmf = -float(np.sum(np.max(cos, axis=-1)))
    m_up = int(m_star[y])
    z_up = occ > obj[y, m_up]
    e_up = base + obj[y, m_up]
    l_mix = -float(np.sum(e_up[~z_up]))

    total = (l_class + config.gamma1 * l_weight
             + config.gamma2 * l_vmf + config.gamma3 * l_mix)
    parts = {"l_class": l_class, "l_weight": l_weight,
             "l_vmf": l_vmf, "l_mix": l_mix}
    return ForwardCache(
        y=y, pooled=pooled, features=features, feat_norms=feat_norms,
        feat_safe=feat_safe, mu=mu, mu_norms=mu_norms, cos=cos, delta=delta,
        log_alpha=log_alpha, obj=obj, occ=occ, occ_index=occ_index,
        m_star=m_star, z_up=z_up, k_star=k_star, scores_norm=scores_norm,
        loss=total, parts=parts, y_hat=y_hat,
    )


def _backward(cache: ForwardCache, params: TrainableParams,
              occluders: OccluderBank,
              config: TrainConfig) -> dict[str, np.ndarray]:
    h, w, k = cache.cos.shape
    num_classes, num_mixtures = params.mixture_logits.shape[:2]
    cells = h * w

    p_soft = np.exp(cache.scores_norm - logsumexp(cache.scores_norm, axis=0))
    d_scores = p_soft.copy()
    d_scores[cache.y] -= 1.0
    d_scores /= cells

    # per-(class, mixture) gradients on the object log planes
    d_planes = np.zeros((num_classes, num_mixtures, h, w))
    d_occ = np.zeros((h, w))
    for yy in range(num_classes):
        mm = int(cache.m_star[yy])
        z = cache.occ > cache.obj[yy, mm]
        d_planes[yy, mm] += d_scores[yy] * (~z)
        d_occ += d_scores[yy] * z
    mm_up = int(cache.m_star[cache.y])
    d_planes[cache.y, mm_up] += -config.gamma3 * (~cache.z_up)

    d_log_l = np.zeros((h, w, k))
    d_logits = np.zeros_like(params.mixture_logits)
    alpha = np.exp(cache.log_alpha)
    for yy in range(num_classes):
        for mm in range(num_mixtures):
            dp = d_planes[yy, mm]
            if not np.any(dp):
                continue
            weights = np.exp(
                cache.log_alpha[yy, mm] + cache.delta
                - cache.obj[yy, mm][..., None]
            )
            u = dp[..., None] * weights
            d_log_l += u
            d_logits[yy, mm] = u - alpha[yy, mm] * np.sum(
                u, axis=-1, keepdims=True
            )

    log_beta = log_simplex(occluders.logits)
    v = np.exp(
        log_beta[cache.occ_index] + cache.delta
        - (cache.occ - occluders.prior_logodds)[..., None]
    )
    d_log_l += d_occ[..., None] * v

    d_cos = config.sigma * d_log_l
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    d_cos_vmf = np.zeros((h, w, k))
    d_cos_vmf[rows, cols, cache.k_star] = -config.gamma2
    d_cos = d_cos + d_cos_vmf

    d_mu = np.einsum("hwk,hwd->kd", d_cos, cache.features, optimize=True)
    radial = np.sum(d_mu * cache.mu, axis=1, keepdims=True)
    d_mu_raw = (d_mu - radial * cache.mu) / cache.mu_norms[:, None]

    grads = {"mu_raw": d_mu_raw, "mixture_logits": d_logits}
    if not config.freeze_backbone:
        d_feat = np.einsum("hwk,kd->hwd", d_cos, cache.mu, optimize=True)
        f = cache.features
        rad = np.sum(d_feat * f, axis=-1, keepdims=True)
        d_g = np.zeros_like(d_feat)
        safe = cache.feat_safe
        d_g[safe] = (d_feat[safe] - rad[safe] * f[safe]) \
            / cache.feat_norms[safe][..., None]
        d_proj = np.einsum("hwd,hwc->dc", d_g, cache.pooled, optimize=True)
        d_proj += config.gamma1 * 2.0 * params.projection
        grads["projection"] = d_proj
    return grads


class ImageStep:
    """Forward/backward pair for a single training image."""

    def __init__(self, params: TrainableParams, occluders: OccluderBank,
                 config: TrainConfig):
        self.params = params
        self.occluders = occluders
        self.config = config
        self._cache: ForwardCache | None = None

    def forward(self, pooled: np.ndarray, y: int) -> ForwardCache:
        self._cache = _forward(self.params, self.occluders, self.config, y,
                               pooled=pooled)
        return self._cache

    def backward(self) -> dict[str, np.ndarray]:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        return _backward(self._cache, self.params, self.occluders, self.config)


def total_loss(features: np.ndarray, y: int, model: CompModel,
               config: TrainConfig) -> tuple[float, dict[str, float]]:
    """Training loss and its per-term breakdown for one feature map."""
    params = TrainableParams(
        mu_raw=model.dictionary.mu,
        mixture_logits=model.mixtures.logits,
        projection=model.backbone.projection,
    )
    cache = _forward(params, model.occluders, config, y, features=features)
    return cache.loss, cache.parts


def loss_gradients(features: np.ndarray, y: int, model: CompModel,
                   config: TrainConfig) -> dict[str, np.ndarray]:
    """One-shot analytic gradients of total_loss for one feature map.

    Gradients are taken with respect to the raw parameter storage (raw
    kernel directions, mixture logits, projection); feature-map gradients
    through the backbone require the pooled cache and are produced inside
    the training loop instead.
    """
    params = TrainableParams(
        mu_raw=model.dictionary.mu,
        mixture_logits=model.mixtures.logits,
        projection=model.backbone.projection,
    )
    cfg = replace(config, freeze_backbone=True)
    cache = _forward(params, model.occluders, cfg, y, features=features)
    return _backward(cache, params, model.occluders, cfg)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _smoothed_frequencies(counts: np.ndarray, total: float,
                          eps: float = LAPLACE_SMOOTHING) -> np.ndarray:
    k = counts.shape[-1]
    return (counts + eps) / (total + k * eps)


def learn_occluder_models(background_images: Sequence[Image],
                          backbone: BackboneParams,
                          dictionary: VmfDictionary, n: int,
                          prior_logodds: float = 0.0,
                          seed: int = 0) -> OccluderBank:
    """Fit position-independent occluder mixtures from background images.

    Each background image is summarized by its normalized histogram of hard
    kernel assignments; the histograms are cosine-clustered into ``n``
    groups and every occluder coefficient vector is the smoothed mean
    histogram of one group.
    """
    if len(background_images) < n:
        raise InitError(
            f"need at least {n} background images, got {len(background_images)}"
        )
    k = dictionary.num_kernels
    hists = []
    for img in background_images:
        feats = extract_features(img, backbone)
        assign = np.argmax(feats @ dictionary.mu.T, axis=-1)
        counts = np.bincount(assign.ravel(), minlength=k).astype(np.float64)
        hists.append(counts / counts.sum())
    hists = np.array(hists)

    norms = np.linalg.norm(hists, axis=1, keepdims=True)
    unit = hists / norms
    try:
        _, groups = spherical_cluster(unit, n, seed)
    except InitError as exc:
        raise InitError(f"cannot fit {n} occluder models: {exc}") from exc

    betas = np.zeros((n, k))
    for j in range(n):
        members = hists[groups == j]
        if members.shape[0] == 0:
            members = hists
        mean = members.mean(axis=0)
        betas[j] = _smoothed_frequencies(mean, 1.0)
    return OccluderBank(logits=np.log(betas), prior_logodds=prior_logodds)


def init_model(images: Sequence[Image], labels: Sequence[int],
               background_images: Sequence[Image],
               config: TrainConfig) -> CompModel:
    """Clustering-based initialization of all model parameters.

    Kernel directions come from hard spherical clustering of every training
    feature vector; each class's images are grouped into ``m`` mixtures by
    cosine clustering of their kernel-assignment maps, and the mixture
    coefficients are smoothed per-position assignment frequencies within
    each group. Occluder mixtures are fit from the background images.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) != len(labels):
        raise InitError("images and labels differ in length")
    num_classes = int(labels.max()) + 1 if labels.size else 0
    if num_classes < 1:
        raise InitError("need at least one class")
    for y in range(num_classes):
        if np.sum(labels == y) < config.m:
            raise InitError(
                f"class {y} has {int(np.sum(labels == y))} images, "
                f"needs at least m={config.m}"
            )
    if len(background_images) < 1:
        raise InitError("need at least one background image")

    backbone = default_backbone(d=config.d, seed=config.seed)
    feats = [extract_features(img, backbone) for img in images]
    h, w, d = feats[0].shape
    for f in feats:
        if f.shape != (h, w, d):
            raise InitError("training images produce differing feature grids")

    all_vectors = np.concatenate([f.reshape(-1, d) for f in feats], axis=0)
    centers, _ = spherical_cluster(all_vectors, config.k, config.seed)
    dictionary = VmfDictionary(mu=centers, sigma=config.sigma)

    assignments = [
        np.argmax(f @ dictionary.mu.T, axis=-1) for f in feats
    ]

    mixture_logits = np.zeros((num_classes, config.m, h, w, config.k))
    eye = np.eye(config.k)
    for y in range(num_classes):
        idx = np.flatnonzero(labels == y)
        onehots = np.array([
            eye[assignments[i]].reshape(-1) for i in idx
        ])
        unit = onehots / np.linalg.norm(onehots, axis=1, keepdims=True)
        try:
            _, groups = spherical_cluster(unit, config.m, config.seed + 1 + y)
        except InitError as exc:
            raise InitError(
                f"class {y}: cannot split images into {config.m} mixtures: {exc}"
            ) from exc
        for mm in range(config.m):
            members = idx[groups == mm]
            if members.size == 0:
                mixture_logits[y, mm] = np.log(1.0 / config.k)
                continue
            counts = np.zeros((h, w, config.k))
            for i in members:
                counts += eye[assignments[i]]
            alpha = _smoothed_frequencies(counts, float(members.size))
            mixture_logits[y, mm] = np.log(alpha)

    occluders = learn_occluder_models(
        background_images, backbone, dictionary, config.n,
        prior_logodds=config.prior_logodds, seed=config.seed + 101,
    )
    return CompModel(
        backbone=backbone,
        dictionary=dictionary,
        mixtures=MixtureBank(logits=mixture_logits),
        occluders=occluders,
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def train(model: CompModel, images: Sequence[Image], labels: Sequence[int],
          config: TrainConfig) -> TrainState:
    """Per-image SGD with momentum over the initialized model.

    Updates follow ``v <- momentum*v - lr*g; theta <- theta + v`` with a
    deterministic shuffle per epoch derived from the config seed. Raises
    DivergenceError (with epoch and image context) on a non-finite loss.
    """
    labels = np.asarray(labels, dtype=np.int64)
    pooled = [pooled_responses(img, model.backbone) for img in images]
    params = TrainableParams(
        mu_raw=model.dictionary.mu * MU_RAW_RADIUS,
        mixture_logits=model.mixtures.logits.copy(),
        projection=model.backbone.projection.copy(),
    )
    velocity = {
        "mu_raw": np.zeros_like(params.mu_raw),
        "mixture_logits": np.zeros_like(params.mixture_logits),
        "projection": np.zeros_like(params.projection),
    }
    state = TrainState(params=params, occluders=model.occluders,
                       config=config, velocity=velocity)
    rng = np.random.default_rng(config.seed)
    n_images = len(images)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_images)
        losses, term_sums = [], {"l_class": 0.0, "l_weight": 0.0,
                                 "l_vmf": 0.0, "l_mix": 0.0}
        correct = 0
        for i in order:
            step = ImageStep(params, model.occluders, config)
            cache = step.forward(pooled[i], int(labels[i]))
            if not np.isfinite(cache.loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, image {i}"
                )
            losses.append(cache.loss)
            for key in term_sums:
                term_sums[key] += cache.parts[key]
            if cache.y_hat == labels[i]:
                correct += 1
            grads = step.backward()
            for name, grad in grads.items():
                vel = velocity[name]
                vel *= config.momentum
                vel -= config.lr * grad
                getattr(params, name)[...] += vel
        state.epoch = epoch
        state.history.append({
            "epoch": epoch,
            "mean_loss": float(np.mean(losses)),
            "l_class": term_sums["l_class"] / n_images,
            "l_weight": term_sums["l_weight"] / n_images,
            "l_vmf": term_sums["l_vmf"] / n_images,
            "l_mix": term_sums["l_mix"] / n_images,
            "train_accuracy": correct / n_images,
        })
    return state
