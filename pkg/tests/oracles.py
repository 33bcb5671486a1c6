"""Independent scalar-loop references used by the metric and loss tests."""

import math


def ccc_loop(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    den = vx + vy + (mx - my) ** 2
    return 1.0 if den == 0 else 2 * cov / den


def ccc_loss_loop(pred, target):
    cols = len(pred[0])
    return sum(1 - ccc_loop([r[d] for r in pred], [r[d] for r in target]) for d in range(cols)) / cols


def f1_loop(preds, labels, c):
    per = []
    tp_all = fp_all = fn_all = 0
    for k in range(c):
        tp = sum(1 for p, l in zip(preds, labels) if p == k and l == k)
        fp = sum(1 for p, l in zip(preds, labels) if p == k and l != k)
        fn = sum(1 for p, l in zip(preds, labels) if p != k and l == k)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        per.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        tp_all, fp_all, fn_all = tp_all + tp, fp_all + fp, fn_all + fn
    micro = 2 * tp_all / (2 * tp_all + fp_all + fn_all)
    return sum(per) / c, micro, per


def accuracy_loop(preds, labels):
    hits = 0
    for p, l in zip(preds, labels):
        if p == l:
            hits += 1
    return hits / len(labels)


def cross_entropy_loop(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[y]
    return total / len(labels)
