"""AdamW, the three-head training step, evaluation and head selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Rng
from .data.dataset import Batch, Dataset, batch_iter
from .losses import LossBundle, head_loss
from .metrics import MetricReport, continuous_report, discrete_report
from .model import HEADS, DeIiiModel, forward

log = logging.getLogger(__name__)

FULL_LR = 5e-6
FULL_WEIGHT_DECAY = 5e-2


class NumericFailure(FloatingPointError):
    def __init__(self, head: str, detail: str):
        super().__init__(f"non-finite loss in {head}: {detail}")
        self.head = head


@dataclass
class OptimizerState:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_update(opt: OptimizerState, params: dict[str, ad.Tensor], grads: dict[str, np.ndarray]) -> None:
    """One AdamW step, in place.

    Weight decay is decoupled: ``theta -= lr * wd * theta`` happens before,
    and independently of, the bias-corrected adaptive step.  Parameters
    without a gradient still decay.
    """
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1 - b1 ** opt.step
    c2 = 1 - b2 ** opt.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.value)
        elif g.shape != p.shape:
            raise ValueError(f"adamw: gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = opt.m.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        else:
            v = opt.v[name]
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        opt.m[name], opt.v[name] = m, v
        theta = p.value
        if opt.weight_decay:
            theta = theta - opt.lr * opt.weight_decay * theta
        theta = theta - opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
        p.value = theta.astype(p.dtype, copy=False)


def compute_losses(model: DeIiiModel, batch: Batch, rng: Rng | None = None):
    try:
        out = forward(model, batch, rng)
    except NonFiniteError as exc:
        raise NumericFailure("encoder", str(exc)) from exc
    losses = {}
    for head, key in (("video", "l_v"), ("audio", "l_a"), ("fusion", "l_f")):
        try:
            losses[key] = head_loss(model.cfg.task, out.heads[head], batch.labels)
        except NonFiniteError as exc:
            raise NumericFailure(f"{head} head", str(exc)) from exc
    total = losses["l_v"] + losses["l_a"] + losses["l_f"]
    return total, losses, out


def train_step(model: DeIiiModel, opt: OptimizerState, batch: Batch, rng: Rng | None = None) -> LossBundle:
    total, losses, _ = compute_losses(model, batch, rng)
    for key, val in losses.items():
        if not np.isfinite(val.value).all():
            raise NumericFailure(key, "loss is not finite")
    named = dict(model.named_parameters())
    leaf_grads = ad.backward(total)
    grads = {name: leaf_grads[p] for name, p in named.items() if p in leaf_grads}
    adamw_update(opt, named, grads)
    return LossBundle(losses["l_v"].item(), losses["l_a"].item(), losses["l_f"].item(), total.item())


def predict(model: DeIiiModel, dataset: Dataset, split: str, batch_size: int = 64) -> tuple[dict, np.ndarray]:
    outs = {h: [] for h in HEADS}
    labels = []
    for batch in batch_iter(dataset, split, batch_size):
        res = forward(model, batch)
        for h in HEADS:
            outs[h].append(res.heads[h].value)
        labels.append(batch.labels)
    return {h: np.concatenate(v) for h, v in outs.items()}, np.concatenate(labels)


def report_for(task: str, output: np.ndarray, labels: np.ndarray, num_classes: int) -> MetricReport:
    if task == "discrete":
        return discrete_report(output.argmax(axis=1), labels, num_classes)
    return continuous_report(output, labels)


def evaluate(model: DeIiiModel, dataset: Dataset, split: str, batch_size: int = 64) -> dict[str, MetricReport]:
    outs, labels = predict(model, dataset, split, batch_size)
    cfg = model.cfg
    return {h: report_for(cfg.task, outs[h], labels, cfg.num_classes) for h in HEADS}


def select_head(results: dict) -> str:
    """Best head by primary metric; ties go to fusion, then video, then audio.

    ``results`` maps head name to a float or a :class:`MetricReport`.
    """
    if not results:
        raise ValueError("select_head: no evaluated heads")
    scores = {h: (r.primary() if isinstance(r, MetricReport) else float(r)) for h, r in results.items()}
    unknown = set(scores) - set(HEADS)
    if unknown:
        raise ValueError(f"select_head: unknown heads {sorted(unknown)}")
    best = max(scores.values())
    return next(h for h in HEADS if h in scores and scores[h] == best)
