"""Evaluation metrics on plain arrays."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

CONTINUOUS_DIMS = ("val", "aro", "dom")


def _ids(values, c: int | None, what: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{what}: expected a non-empty 1-d id array")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise ValueError(f"{what}: class ids must be integers")
        arr = arr.astype(np.int64)
    if c is not None and (arr.min() < 0 or arr.max() >= c):
        raise ValueError(f"{what}: class ids must lie in [0, {c})")
    return arr


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"accuracy: {preds.shape} predictions vs {labels.shape} labels")
    if preds.size == 0:
        raise ValueError("accuracy: empty input")
    return float(np.mean(preds == labels))


def f1_scores(preds, labels, num_classes: int) -> tuple[float, float, list[float]]:
    """Macro F1, micro F1 and per-class F1.

    A class with no true and no predicted members has F1 = 0 and still counts
    towards the macro mean.
    """
    preds = _ids(preds, num_classes, "f1_scores")
    labels = _ids(labels, num_classes, "f1_scores")
    if preds.shape != labels.shape:
        raise ValueError("f1_scores: length mismatch")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (labels, preds), 1)
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    tp_all, fp_all, fn_all = tp.sum(), fp.sum(), fn.sum()
    micro = 2 * tp_all / (2 * tp_all + fp_all + fn_all)
    return float(per_class.mean()), float(micro), per_class.tolist()


def ccc(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("ccc: length mismatch")
    if x.size < 2:
        raise ValueError("ccc: needs at least 2 samples")
    mx, my = x.mean(), y.mean()
    cov = np.mean((x - mx) * (y - my))
    den = np.mean((x - mx) ** 2) + np.mean((y - my) ** 2) + (mx - my) ** 2
    if den == 0:
        return 1.0
    return float(2 * cov / den)


@dataclass
class MetricReport:
    """Flat metric record; discrete fields or continuous CCC fields are set."""

    accuracy: float | None = None
    f1_macro: float | None = None
    f1_micro: float | None = None
    f1_per_class: list[float] | None = None
    ccc_val: float | None = None
    ccc_aro: float | None = None
    ccc_dom: float | None = None

    def primary(self) -> float:
        if self.accuracy is not None:
            return self.accuracy
        return float(np.mean([self.ccc_val, self.ccc_aro, self.ccc_dom]))

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def discrete_report(preds, labels, num_classes: int) -> MetricReport:
    macro, micro, per_class = f1_scores(preds, labels, num_classes)
    return MetricReport(accuracy=accuracy(preds, labels), f1_macro=macro,
                        f1_micro=micro, f1_per_class=per_class)


def continuous_report(preds, targets) -> MetricReport:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.ndim != 2 or preds.shape[1] != 3:
        raise ValueError(f"continuous_report: expected [N, 3] arrays, got {preds.shape} and {targets.shape}")
    vals = [ccc(preds[:, d], targets[:, d]) for d in range(3)]
    return MetricReport(ccc_val=vals[0], ccc_aro=vals[1], ccc_dom=vals[2])
