"""Training objective: masked Huber loss + temporal smoothness + L2 decay.

Each function returns the value together with its gradient with respect to
the prediction, so the trainer can chain it into the model's backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ObjectiveConfig:
    delta: float = 1.0
    lam: float = 0.15
    weight_decay: float = 1e-3

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")


def huber_loss(pred, target, mask, delta: float = 1.0):
    """Mean Huber loss over ``mask`` and its gradient w.r.t. ``pred``.

    Per entry, with ``r = pred - target``: ``r**2 / 2`` when ``|r| <= delta``,
    otherwise ``delta * (|r| - delta / 2)``.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ValueError(f"shapes differ: pred {pred.shape}, target {target.shape}, "
                         f"mask {mask.shape}")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("Huber loss over an empty mask")
    r = np.where(mask, pred - target, 0.0)
    a = np.abs(r)
    quad = a <= delta
    loss = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))
    grad = np.where(quad, r, delta * np.sign(r)) / n
    return float(loss[mask].sum() / n), np.where(mask, grad, 0.0)


def smoothness_penalty(pred, lam: float):
    """``lam`` times the mean absolute one-step temporal difference.

    The mean runs over the ``(T-1) * N * F`` consecutive differences along
    the last axis; ``T = 1`` gives 0.  The subgradient takes ``sign(0) = 0``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    grad = np.zeros_like(pred)
    N, F, T = pred.shape
    if lam == 0 or T < 2:
        return 0.0, grad
    diff = pred[:, :, 1:] - pred[:, :, :-1]
    scale = lam / ((T - 1) * N * F)
    s = np.sign(diff) * scale
    grad[:, :, 1:] += s
    grad[:, :, :-1] -= s
    return float(scale * np.abs(diff).sum()), grad


def objective(pred, target, train_mask, config: ObjectiveConfig, params=None):
    """Total objective and its gradients.

    Returns
    -------
    value : float
        ``huber + smoothness + weight_decay * sum ||U||_F**2``.
    dL_dpred : ndarray
    decay_grads : list of ndarray
        ``2 * weight_decay * U`` for each parameter tensor (empty without params).
    """
    value, grad = huber_loss(pred, target, train_mask, config.delta)
    if config.lam > 0:
        reg, reg_grad = smoothness_penalty(pred, config.lam)
        value += reg
        grad = grad + reg_grad
    decay_grads = []
    layers = [] if params is None else params.layers
    if config.weight_decay > 0:
        for U in layers:
            value += config.weight_decay * float(np.sum(U * U))
    for U in layers:
        decay_grads.append(2.0 * config.weight_decay * U)
    return value, grad, decay_grads
