"""Supervised loss for the student encoder and Gaussian policy helpers."""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def bce_with_logits(logit, label):
    """Elementwise binary cross-entropy of sigmoid(logit) against label, computed stably."""
    z = np.asarray(logit, dtype=float)
    y = np.asarray(label, dtype=float)
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def student_loss(pred9, pred_logit, truth9, truth_align, w: float = 0.1, with_grad: bool = False):
    """Pose MSE (mean over batch and the 9 pose dims) plus w times mean BCE on alignment.

    Accepts single samples or batches. ``pred_logit=None`` drops the BCE term (no-alignment
    ablation). With ``with_grad`` also returns d loss / d pred9 and d loss / d logit.
    """
    p = np.atleast_2d(np.asarray(pred9, dtype=float))
    t = np.atleast_2d(np.asarray(truth9, dtype=float))
    n = p.shape[0]
    diff = p - t
    mse = float(np.mean(diff**2))
    bce = 0.0
    d_logit = None
    if pred_logit is not None:
        z = np.asarray(pred_logit, dtype=float).reshape(n)
        y = np.asarray(truth_align, dtype=float).reshape(n)
        bce = float(np.mean(bce_with_logits(z, y)))
        d_logit = (w * (sigmoid(z) - y) / n).reshape(n, 1)
    loss = mse + w * bce
    if not with_grad:
        return loss
    return loss, {"mse": mse, "bce": bce}, 2.0 * diff / diff.size, d_logit


def gaussian_log_prob(x, mean, log_std):
    """Diagonal Gaussian log density summed over the last axis."""
    z = (np.asarray(x) - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * LOG_2PI


def gaussian_entropy(log_std) -> float:
    log_std = np.asarray(log_std, dtype=float)
    return float(np.sum(log_std) + 0.5 * log_std.size * (1.0 + LOG_2PI))
