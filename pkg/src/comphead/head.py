"""Generative classification head with per-position occluder competition.

Every class owns M per-position mixture-coefficient maps over the shared
kernel dictionary; a small bank of position-independent occluder mixtures
competes with the object model at each feature-map cell. All plane algebra
happens in the log domain.

Numerical layout: the per-position maximum of the log-likelihood tensor is
split off first (``base`` + ``delta``). Decisions (class, mixture, per-cell
occlusion) and the occlusion score map are functions of ``delta`` only, so
a constant added to every log-likelihood entry provably cannot change them
- which is what makes dropping the shared density normalizer safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


def logsumexp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(
        np.sum(np.exp(x - m), axis=axis)
    )


def log_simplex(logits: np.ndarray) -> np.ndarray:
    """Map unconstrained logits to log coefficients summing to one."""
    return logits - logsumexp(logits, axis=-1)[..., None]


@dataclass
class MixtureBank:
    """Per-class mixture coefficient maps, stored as unconstrained logits.

    ``logits`` has shape (num_classes, M, H, W, K); the simplex constraint
    over K is enforced by normalization inside every read, so gradient
    updates on the logits can never leave the simplex.
    """

    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 5:
            raise ShapeError(
                f"mixture logits must be (Y, M, H, W, K), got {self.logits.shape}"
            )

    @property
    def num_classes(self) -> int:
        return self.logits.shape[0]

    @property
    def num_mixtures(self) -> int:
        return self.logits.shape[1]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.logits.shape[2], self.logits.shape[3]

    @property
    def num_kernels(self) -> int:
        return self.logits.shape[4]

    def log_alpha(self, y: int, m: int) -> np.ndarray:
        return log_simplex(self.logits[y, m])

    def log_alpha_all(self) -> np.ndarray:
        return log_simplex(self.logits)


@dataclass
class OccluderBank:
    """Position-independent occluder mixtures plus the occlusion prior."""

    logits: np.ndarray        # (N, K)
    prior_logodds: float = 0.0

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise ShapeError(
                f"occluder logits must be (N, K), got {self.logits.shape}"
            )

    @property
    def num_models(self) -> int:
        return self.logits.shape[0]

    @property
    def num_kernels(self) -> int:
        return self.logits.shape[1]

    def log_beta(self) -> np.ndarray:
        return log_simplex(self.logits)


@dataclass
class InferenceResult:
    """Everything the forward pass decides, plus planes kept for training."""

    scores: np.ndarray            # (Y,) occlusion-robust class log scores
    y_hat: int                    # argmax class (lowest index on ties)
    m_star: np.ndarray            # (Y,) winning mixture per class
    z_map: np.ndarray             # (H, W) bool, occluded cells at (y_hat, m*)
    occ_score: np.ndarray         # (H, W) occluder-vs-object log ratio
    occ_index: np.ndarray         # (H, W) winning occluder model per cell
    e_planes: np.ndarray          # (Y, M, H, W) object mixture log planes
    o_plane: np.ndarray           # (H, W) occluder log plane
    # internals retained for the training step
    reduced_scores: np.ndarray = field(repr=False, default=None)  # (Y, M)
    obj_reduced: np.ndarray = field(repr=False, default=None)     # (Y, M, H, W)
    occ_reduced: np.ndarray = field(repr=False, default=None)     # (H, W)

    def z_for(self, y: int, m: int) -> np.ndarray:
        """Occlusion map of mixture (y, m): occluder beats object."""
        return self.occ_reduced > self.obj_reduced[y, m]


def reduce_likelihood(log_l: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split (H, W, K) log likelihoods into per-position max and residual."""
    base = np.max(log_l, axis=-1)
    return base, log_l - base[..., None]


def mixture_log_likelihood_plane(log_l: np.ndarray,
                                 log_alpha: np.ndarray) -> np.ndarray:
    """Object-model log plane: E_p = log sum_k alpha_pk exp(logL_pk)."""
    if log_l.shape != log_alpha.shape:
        raise ShapeError(
            f"likelihood {log_l.shape} vs coefficients {log_alpha.shape}"
        )
    base, delta = reduce_likelihood(log_l)
    return base + logsumexp(log_alpha + delta, axis=-1)


def occluder_log_likelihood_plane(
    log_l: np.ndarray, occluders: OccluderBank
) -> tuple[np.ndarray, np.ndarray]:
    """Occluder log plane with the prior folded in, plus the winning model.

    O_p = max_n log sum_k beta_nk exp(logL_pk) + prior_logodds; the argmax
    over occluder models is returned alongside (lowest index on ties).
    """
    if log_l.shape[-1] != occluders.num_kernels:
        raise ShapeError(
            f"likelihood has {log_l.shape[-1]} kernels, occluder bank has "
            f"{occluders.num_kernels}"
        )
    base, delta = reduce_likelihood(log_l)
    h_occ, idx = occluder_reduced(delta, occluders)
    return base + h_occ, idx


def occluder_reduced(delta: np.ndarray,
                      occluders: OccluderBank) -> tuple[np.ndarray, np.ndarray]:
    log_beta = occluders.log_beta()               # (N, K)
    per_model = logsumexp(
        delta[..., None, :] + log_beta, axis=-1
    )                                             # (H, W, N)
    idx = np.argmax(per_model, axis=-1)
    best = np.max(per_model, axis=-1)
    return best + occluders.prior_logodds, idx


def object_reduced(delta: np.ndarray, mixtures: MixtureBank) -> np.ndarray:
    log_alpha = mixtures.log_alpha_all()          # (Y, M, H, W, K)
    return logsumexp(log_alpha + delta, axis=-1)  # (Y, M, H, W)


def robust_score(e_plane: np.ndarray,
                 o_plane: np.ndarray) -> tuple[float, np.ndarray]:
    """Occlusion-robust plane score: sum of the per-cell winners.

    Returns ``(sum_p max(E_p, O_p), O > E)``; ties resolve to the object
    (not occluded).
    """
    if e_plane.shape != o_plane.shape:
        raise ShapeError(f"plane shapes differ: {e_plane.shape} vs {o_plane.shape}")
    z = o_plane > e_plane
    return float(np.sum(np.maximum(e_plane, o_plane))), z


def infer_from_likelihood(log_l: np.ndarray, mixtures: MixtureBank,
                          occluders: OccluderBank) -> InferenceResult:
    """Single-pass inference given the log-likelihood tensor."""
    h, w, k = log_l.shape
    if k != mixtures.num_kernels or (h, w) != mixtures.grid_shape:
        raise ShapeError(
            f"likelihood shape {log_l.shape} does not match mixture bank "
            f"{mixtures.grid_shape + (mixtures.num_kernels,)}"
        )
    base, delta = reduce_likelihood(log_l)
    obj = object_reduced(delta, mixtures)            # (Y, M, H, W)
    occ, occ_idx = occluder_reduced(delta, occluders)  # (H, W)

    reduced_scores = np.sum(np.maximum(obj, occ), axis=(2, 3))  # (Y, M)
    m_star = np.argmax(reduced_scores, axis=1)
    per_class = reduced_scores[np.arange(mixtures.num_classes), m_star]
    y_hat = int(np.argmax(per_class))

    base_sum = float(np.sum(base))
    scores = per_class + base_sum

    best_obj = obj[y_hat, m_star[y_hat]]
    occ_score = occ - best_obj
    z_map = occ_score > 0.0

    e_planes = base[None, None] + obj
    o_plane = base + occ
    return InferenceResult(
        scores=scores,
        y_hat=y_hat,
        m_star=m_star,
        z_map=z_map,
        occ_score=occ_score,
        occ_index=occ_idx,
        e_planes=e_planes,
        o_plane=o_plane,
        reduced_scores=reduced_scores,
        obj_reduced=obj,
        occ_reduced=occ,
    )


def occlusion_score_map(log_l: np.ndarray, mixtures: MixtureBank,
                        occluders: OccluderBank, y: int, m: int) -> np.ndarray:
    """Occluder-vs-object log-likelihood ratio per cell for mixture (y, m).

    Positive values indicate the occluder bank (with its prior) explains the
    cell better than the object model does.
    """
    if not (0 <= y < mixtures.num_classes and 0 <= m < mixtures.num_mixtures):
        raise IndexError(f"class/mixture index ({y}, {m}) out of range")
    _, delta = reduce_likelihood(log_l)
    h_obj = logsumexp(mixtures.log_alpha(y, m) + delta, axis=-1)
    h_occ, _ = occluder_reduced(delta, occluders)
    return h_occ - h_obj


def median_filter_3x3(plane: np.ndarray) -> np.ndarray:
    """3x3 median filter with clamped (edge-replicated) borders."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ShapeError(f"expected a 2-d plane, got shape {plane.shape}")
    padded = np.pad(plane, 1, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
    return np.median(windows.reshape(plane.shape + (9,)), axis=-1)
