"""Spherical kernel dictionary: densities, clustering, likelihood tensor.

Feature vectors live on the unit sphere and each kernel is a unit mean
direction with one shared concentration ``sigma``. Because sigma is shared,
the normalization constant of the density is the same for every kernel and
is dropped throughout; all downstream scores are differences or argmaxes,
so the constant cancels. Everything is kept in the log domain: the
unnormalized log density is simply ``sigma * <mu_k, f>``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InitError, ShapeError

UNIT_NORM_TOL = 1e-3


@dataclass
class VmfDictionary:
    """K unit-norm kernel directions with a shared concentration."""

    mu: np.ndarray      # (K, D), rows unit-norm
    sigma: float

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if self.mu.ndim != 2:
            raise ShapeError(f"mu must be (K, D), got shape {self.mu.shape}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        norms = np.linalg.norm(self.mu, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("kernel directions must be unit-norm")

    @property
    def num_kernels(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]


def vmf_log_density(f: np.ndarray, k: int, dictionary: VmfDictionary) -> float:
    """Unnormalized log density of kernel ``k`` at unit vector ``f``."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (dictionary.dim,):
        raise ShapeError(f"expected a vector of dim {dictionary.dim}, got {f.shape}")
    norm = np.linalg.norm(f)
    if abs(norm - 1.0) > UNIT_NORM_TOL:
        raise ValueError(f"input vector norm {norm:.6f} is not within "
                         f"{UNIT_NORM_TOL} of 1")
    return float(dictionary.sigma * (dictionary.mu[k] @ f))


def compute_likelihood_tensor(features: np.ndarray,
                              dictionary: VmfDictionary) -> np.ndarray:
    """Per-position, per-kernel log likelihoods, shape (H, W, K).

    Entry (p, k) is ``sigma * <mu_k, f_p>``; computing all positions at once
    is a 1x1 convolution of the feature map with the kernel directions.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3 or features.shape[2] != dictionary.dim:
        raise ShapeError(
            f"feature map shape {features.shape} incompatible with kernel "
            f"dim {dictionary.dim}"
        )
    norms = np.linalg.norm(features, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise ValueError("feature map contains non-unit vectors")
    return dictionary.sigma * (features @ dictionary.mu.T)


def cluster_objective(features: np.ndarray, centers: np.ndarray) -> float:
    """Sum over inputs of the best cosine against any center."""
    return float(np.sum(np.max(features @ centers.T, axis=1)))


def spherical_cluster(features: np.ndarray, k: int, seed: int,
                      max_iters: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Hard cosine clustering of unit vectors into ``k`` mean directions.

    Alternates nearest-center assignment (by cosine, lowest index on ties)
    with the maximum-likelihood update ``center <- normalize(sum of
    members)``. Empty clusters are re-seeded to the input vector with the
    worst best-cosine under the current centers. The objective
    ``sum_p max_k <mu_k, f_p>`` is checked to be non-decreasing every
    iteration.

    Returns (centers (k, D), assignments (P,)).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"expected (P, D) inputs, got shape {features.shape}")
    n = features.shape[0]
    if n < k:
        raise InitError(f"need at least {k} vectors, got {n}")
    distinct = np.unique(features, axis=0)
    if distinct.shape[0] < k:
        raise InitError(
            f"need at least {k} distinct vectors, got {distinct.shape[0]}"
        )

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    centers = []
    for idx in order:
        cand = features[idx]
        if not any(np.array_equal(cand, c) for c in centers):
            centers.append(cand.copy())
        if len(centers) == k:
            break
    centers = np.array(centers)

    assignments = np.full(n, -1, dtype=np.int64)
    prev_objective = -np.inf
    for _ in range(max_iters):
        sims = features @ centers.T
        new_assignments = np.argmax(sims, axis=1)
        new_centers = centers.copy()
        best = sims[np.arange(n), new_assignments]
        for j in range(k):
            members = features[new_assignments == j]
            if members.shape[0] == 0:
                worst = int(np.argmin(best))
                new_centers[j] = features[worst]
                continue
            total = members.sum(axis=0)
            norm = np.linalg.norm(total)
            if norm > 1e-12:
                new_centers[j] = total / norm
        centers = new_centers
        objective = cluster_objective(features, centers)
        if objective < prev_objective - 1e-9:
            raise AssertionError(
                f"clustering objective decreased: {prev_objective} -> {objective}"
            )
        prev_objective = objective
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
    # final assignment against the final centers
    assignments = np.argmax(features @ centers.T, axis=1)
    return centers, assignments


def spherical_cluster_ml(features: np.ndarray, k: int, seed: int,
                         max_iters: int = 100,
                         sigma: float = 30.0) -> VmfDictionary:
    """Cluster unit vectors and wrap the centers in a dictionary."""
    centers, _ = spherical_cluster(features, k, seed, max_iters)
    return VmfDictionary(mu=centers, sigma=sigma)


def hard_assignments(features: np.ndarray,
                     dictionary: VmfDictionary) -> np.ndarray:
    """Nearest-kernel index for every position of an (H, W, D) feature map."""
    sims = features @ dictionary.mu.T
    return np.argmax(sims, axis=-1)
