"""Plain linear-softmax classification head over flattened feature maps.

Reference point for the occlusion-robustness benchmark: same feature
extractor, cross-entropy only, no occluder modeling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .head import logsumexp


@dataclass
class LinearHead:
    weights: np.ndarray  # (Y, H*W*D)
    bias: np.ndarray     # (Y,)

    def logits(self, features: np.ndarray) -> np.ndarray:
        return self.weights @ features.reshape(-1) + self.bias

    def predict(self, features: np.ndarray) -> int:
        return int(np.argmax(self.logits(features)))


def train_linear_head(feature_maps: list[np.ndarray], labels: np.ndarray,
                      num_classes: int, lr: float = 0.1,
                      momentum: float = 0.9, epochs: int = 200,
                      weight_decay: float = 1e-4,
                      seed: int = 0) -> LinearHead:
    """Full-batch SGD with momentum on the softmax cross-entropy."""
    labels = np.asarray(labels, dtype=np.int64)
    x = np.array([f.reshape(-1) for f in feature_maps])   # (B, F)
    n, dim = x.shape
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((num_classes, dim)) * 0.01
    b = np.zeros(num_classes)
    vw = np.zeros_like(w)
    vb = np.zeros_like(b)
    onehot = np.eye(num_classes)[labels]
    for _ in range(epochs):
        logits = x @ w.T + b
        log_z = logsumexp(logits, axis=1)
        probs = np.exp(logits - log_z[:, None])
        d_logits = (probs - onehot) / n
        gw = d_logits.T @ x + weight_decay * w
        gb = d_logits.sum(axis=0)
        vw = momentum * vw - lr * gw
        vb = momentum * vb - lr * gb
        w = w + vw
        b = b + vb
    return LinearHead(weights=w, bias=b)
