"""Differentiable training losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


@dataclass(frozen=True)
class LossBundle:
    l_v: float
    l_a: float
    l_f: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {"L_V": self.l_v, "L_A": self.l_a, "L_F": self.l_f, "total": self.total}


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch mean of ``-log softmax(logits)[label]``, evaluated in log space."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.size or labels.size == 0:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs {labels.size} labels")
    c = logits.shape[1]
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"cross_entropy: labels must lie in [0, {c}), got {labels.tolist()}")
    lse = ad.logsumexp(logits, axis=1)[:, 0]
    picked = logits[np.arange(labels.size), labels]
    return ad.mean(lse - picked)


def ccc_tensor(x: Tensor, y: Tensor) -> Tensor:
    """Concordance correlation along axis 0, with population moments.

    ``x`` and ``y`` are ``[B]`` or ``[B, K]``; returns ``[]`` or ``[K]``.
    A column whose denominator vanishes (both sides constant with equal
    means) is assigned the constant 1.
    """
    if x.shape != y.shape:
        raise ShapeError(f"ccc: prediction shape {x.shape} != target shape {y.shape}")
    if x.shape[0] < 2:
        raise ValueError("ccc: needs at least 2 samples")
    mx = ad.mean(x, axis=0, keepdims=True)
    my = ad.mean(y, axis=0, keepdims=True)
    dx = x - mx
    dy = y - my
    cov = ad.mean(dx * dy, axis=0)
    den = ad.mean(dx * dx, axis=0) + ad.mean(dy * dy, axis=0) + (mx[0] - my[0]) * (mx[0] - my[0])
    degenerate = den.value == 0
    if degenerate.any():
        safe = den + ad.constant(degenerate.astype(den.dtype))
        value = ad.scale(cov, 2.0) / safe
        return value + ad.constant(degenerate.astype(den.dtype))
    return ad.scale(cov, 2.0) / den


def ccc_loss(pred: Tensor, target) -> Tensor:
    """Mean over output dimensions of ``1 - CCC``."""
    target = target if isinstance(target, Tensor) else ad.constant(target, dtype=pred.dtype)
    if pred.ndim != 2:
        raise ShapeError(f"ccc_loss: expected [B, K] predictions, got {pred.shape}")
    return ad.mean(1.0 - ccc_tensor(pred, target))


def head_loss(task: str, output: Tensor, labels) -> Tensor:
    if task == "discrete":
        return cross_entropy(output, labels)
    return ccc_loss(output, np.asarray(labels, dtype=output.dtype))
