"""Loss functions returning ``(loss, gradient w.r.t. the prediction)``."""

from __future__ import annotations

import numpy as np

COSINE_EPS = 1e-12


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch for integer ``labels``."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or y.shape != (z.shape[0],):
        raise ValueError("logits must be (B, C) and labels (B,)")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logsum[:, None]
    n = z.shape[0]
    loss = -logp[np.arange(n), y].mean()
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return float(loss), grad / n


def cosine_loss(pred, target, eps: float = COSINE_EPS):
    """Mean of ``1 - <pred / (|pred| + eps), target>`` over all points."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape or p.shape[-1] != 3:
        raise ValueError("prediction and target must share a (..., 3) shape")
    norm = np.linalg.norm(p, axis=-1, keepdims=True)
    denom = norm + eps
    u = p / denom
    dots = np.sum(u * t, axis=-1, keepdims=True)
    count = dots.size
    loss = float(np.mean(1.0 - dots))
    # d/dp <p/(|p|+eps), t> = t/(|p|+eps) - <p,t> p / (|p| (|p|+eps)^2)
    safe = np.where(norm > 0, norm, 1.0)
    ptd = np.sum(p * t, axis=-1, keepdims=True)
    dgrad = t / denom - ptd * p / (safe * denom**2)
    return loss, -dgrad / count


def loss_fn(kind: str):
    return {"softmax_cross_entropy": softmax_cross_entropy, "cosine": cosine_loss}[kind]
