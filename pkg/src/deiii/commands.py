"""Implementations behind the ``deiii`` subcommands.

Output layout of a training run (``<out>``)::

    config.json      effective config, defaults applied
    train_log.jsonl  one JSON object per epoch
    best.ckpt        parameters with the best validation score
    summary.json     best epoch, selected head, validation metrics
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Rng
from .config import ConfigError, RunConfig
from .data.dataset import DataError, Dataset, batch_iter
from .data.synth import synth_generate
from .heatmap import export_heatmap
from .losses import head_loss
from .metrics import MetricReport
from .model import HEADS, build_model, inference_head, load_checkpoint, save_checkpoint
from .training import NumericFailure, OptimizerState, predict, report_for, select_head, train_step

log = logging.getLogger(__name__)

DIRECTIONS = {"video-query": "video_query", "audio-query": "audio_query", "ov": "ov"}
DISCRETE_COLUMNS = ("variant", "f1_macro", "f1_micro", "accuracy")
CONTINUOUS_COLUMNS = ("variant", "ccc_val", "ccc_aro", "ccc_dom")


def _dtype(cfg: RunConfig):
    return np.float32 if cfg.train.precision == "f32" else np.float64


def cmd_synth(cfg: RunConfig, out=None, force: bool = False) -> Path:
    spec = cfg.synth_spec()
    if spec is None:
        raise ConfigError("synth needs a data.synth section")
    root = Path(out or cfg.data.root or cfg.output)
    return synth_generate(spec, root, force=force)


def resolve_dataset(cfg: RunConfig, out_dir: Path) -> tuple[Dataset, Path]:
    """Load ``data.root``; generate it first from ``data.synth`` if missing."""
    root = Path(cfg.data.root) if cfg.data.root else out_dir / "data"
    if not (root / "manifest.json").is_file():
        if cfg.synth_spec() is None:
            raise DataError(f"no dataset at {root} and no data.synth section to generate one")
        synth_generate(cfg.synth_spec(), root, force=False)
    ds = Dataset.load(root, cfg.model.task, cfg.model.num_classes if cfg.model.task == "discrete" else None,
                      dtype=_dtype(cfg))
    return ds, root


def _val_loss(cfg: RunConfig, outs: dict, labels: np.ndarray, head: str) -> float:
    return head_loss(cfg.model.task, ad.constant(outs[head]), labels).item()


def _monitor(cfg: RunConfig, reports: dict[str, MetricReport]) -> tuple[str, float]:
    head = select_head(reports) if cfg.train.monitor == "best" else cfg.train.monitor
    return head, reports[head].primary()


def cmd_train(cfg: RunConfig, out=None, force: bool = False) -> dict:
    out_dir = Path(out or cfg.output)
    log_path = out_dir / "train_log.jsonl"
    if log_path.exists() and not force:
        raise FileExistsError(f"{out_dir} already holds a training run (use --force)")
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = copy.deepcopy(cfg)
    with ad.precision(cfg.train.precision):
        dataset, data_root = resolve_dataset(cfg, out_dir)
        cfg.data.root = str(data_root)
        cfg.dump(out_dir / "config.json")
        seed = Rng(cfg.train.seed)
        model = build_model(cfg.model, seed.child("model"))
        shuffle = seed.child("shuffle")
        dropout_rng = seed.child("dropout") if cfg.model.dropout > 0 else None
        opt = OptimizerState(lr=cfg.train.lr, weight_decay=cfg.train.weight_decay)
        ckpt = out_dir / "best.ckpt"
        echo = {"data_root": str(data_root), "epoch": 0}
        save_checkpoint(model, ckpt, echo)
        log_path.write_text("")

        best_key = None
        best = {"epoch": 0, "val": None}
        bad = 0
        epochs_run = 0
        for epoch in range(1, cfg.train.epochs + 1):
            sums = np.zeros(4)
            count = 0
            try:
                for batch in batch_iter(dataset, "train", cfg.train.batch_size, shuffle):
                    lb = train_step(model, opt, batch, dropout_rng)
                    sums += np.array([lb.l_v, lb.l_a, lb.l_f, lb.total]) * len(batch)
                    count += len(batch)
            except NumericFailure as exc:
                with log_path.open("a") as fh:
                    fh.write(json.dumps({"epoch": epoch, "error": str(exc), "head": exc.head}) + "\n")
                raise
            epochs_run = epoch
            outs, labels = predict(model, dataset, "val", cfg.train.batch_size)
            reports = {h: report_for(cfg.model.task, outs[h], labels, cfg.model.num_classes) for h in HEADS}
            head, score = _monitor(cfg, reports)
            vloss = _val_loss(cfg, outs, labels, head)
            mean = sums / count
            record = {"epoch": epoch, "L_V": mean[0], "L_A": mean[1], "L_F": mean[2], "total": mean[3],
                      "val": {h: r.to_dict() for h, r in reports.items()}, "monitor": head,
                      "val_score": score, "val_loss": vloss}
            with log_path.open("a") as fh:
                fh.write(json.dumps(record) + "\n")
            # a better score always wins; at equal score the loss must drop by min_delta
            if best_key is None or score > best_key[0] or (
                    score == best_key[0] and vloss < best_key[1] - cfg.train.min_delta):
                best_key = (score, vloss)
                best = {"epoch": epoch, "val": reports}
                bad = 0
                save_checkpoint(model, ckpt, {**echo, "epoch": epoch})
            else:
                bad += 1
                if bad >= cfg.train.patience:
                    log.info("early stop after epoch %d", epoch)
                    break

        selected = select_head(best["val"]) if best["val"] else inference_head(cfg.model.variant)
        summary = {
            "best_epoch": best["epoch"],
            "epochs_run": epochs_run,
            "selected_head": selected,
            "inference_head": inference_head(cfg.model.variant),
            "val": {h: r.to_dict() for h, r in best["val"].items()} if best["val"] else {},
        }
        # re-stamp the checkpoint so eval can find the selected head
        state_model, state_echo = load_checkpoint(ckpt)
        save_checkpoint(state_model, ckpt, {**state_echo, "selected_head": selected})
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def _load_for_eval(checkpoint, cfg: RunConfig | None, data_root=None):
    model, echo = load_checkpoint(checkpoint, cfg.model if cfg is not None else None)
    root = data_root or (cfg.data.root if cfg is not None and cfg.data.root else None) or echo.get("data_root")
    if root is None:
        raise DataError("no dataset root: pass one in the config or train with a recorded data root")
    num_classes = model.cfg.num_classes if model.cfg.task == "discrete" else None
    dataset = Dataset.load(root, model.cfg.task, num_classes, dtype=model.head_video.fc1.weight.dtype)
    return model, echo, dataset


def cmd_eval(checkpoint, split: str = "test", head: str | None = None, cfg: RunConfig | None = None,
             out=None, data_root=None) -> dict:
    model, echo, dataset = _load_for_eval(checkpoint, cfg, data_root)
    head = head or echo.get("selected_head") or inference_head(model.cfg.variant)
    if head not in HEADS:
        raise ConfigError(f"unknown head {head!r}; expected one of {HEADS}")
    outs, labels = predict(model, dataset, split)
    report = report_for(model.cfg.task, outs[head], labels, model.cfg.num_classes).to_dict()
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"metrics_{split}_{head}.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def cmd_ablate(cfg: RunConfig, variants, out=None, force: bool = False) -> list[dict]:
    if not variants:
        raise ConfigError("ablate needs at least one variant")
    out_dir = Path(out or cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    with ad.precision(cfg.train.precision):
        _, data_root = resolve_dataset(cfg, out_dir)
    discrete = cfg.model.task == "discrete"
    columns = DISCRETE_COLUMNS if discrete else CONTINUOUS_COLUMNS
    rows = []
    for variant in variants:
        run = copy.deepcopy(cfg)
        run.data.root = str(data_root)
        run.model.variant = variant
        run.train.monitor = inference_head(variant)
        try:
            run.validate()
            cmd_train(run, out_dir / "variants" / variant, force=force)
            report = cmd_eval(out_dir / "variants" / variant / "best.ckpt", "test",
                              inference_head(variant), data_root=data_root)
            rows.append({c: (variant if c == "variant" else report[c]) for c in columns})
        except Exception as exc:  # reported per row, not fatal to the table
            log.warning("variant %s failed: %s", variant, exc)
            rows.append({"variant": variant, "error": f"{type(exc).__name__}: {exc}"})
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    (out_dir / "ablation.csv").write_text(buf.getvalue())
    (out_dir / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows


def attention_matrix(model, sample, direction: str) -> np.ndarray:
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown direction {direction!r}; expected one of {sorted(DIRECTIONS)}")
    flow = None if sample.flow is None else sample.flow[None]
    res = model(sample.audio[None], sample.video[None], flow)
    key = DIRECTIONS[direction]
    if key not in res.records:
        raise ConfigError(f"variant {model.cfg.variant} produces no {direction} attention")
    return res.records[key].weights[0]


def cmd_heatmap(checkpoint, sample_id: str, direction: str, out, cfg: RunConfig | None = None,
                data_root=None) -> tuple[Path, Path]:
    model, _, dataset = _load_for_eval(checkpoint, cfg, data_root)
    if sample_id not in dataset.by_id:
        raise DataError(f"sample {sample_id!r} not in dataset")
    weights = attention_matrix(model, dataset.by_id[sample_id], direction)
    return export_heatmap(weights, Path(out) / f"heatmap_{sample_id}_{direction}")
