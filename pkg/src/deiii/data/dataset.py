"""Manifest loading and minibatching."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autodiff import Rng
from .features import read_feature_file

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    """Dataset files are missing or inconsistent."""


@dataclass
class Sample:
    id: str
    split: str
    label: object
    audio: np.ndarray
    video: np.ndarray
    flow: np.ndarray | None = None


@dataclass
class Batch:
    ids: list[str]
    audio: np.ndarray          # [B, m, d_a]
    video: np.ndarray          # [B, n, d_v]
    flow: np.ndarray | None    # [B, n, d_o]
    labels: np.ndarray         # [B] class ids or [B, 3] targets

    def __len__(self) -> int:
        return len(self.ids)


def load_manifest(root) -> list[dict]:
    root = Path(root)
    path = root / "manifest.json"
    if not path.is_file():
        raise DataError(f"no manifest at {path}")
    try:
        entries = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(entries, list):
        raise DataError(f"{path}: manifest must be a JSON list of samples")
    seen: dict[str, str] = {}
    for e in entries:
        for key in ("id", "audio_path", "video_path", "label", "split"):
            if key not in e:
                raise DataError(f"manifest entry {e.get('id', '?')} lacks {key!r}")
        if e["split"] not in SPLITS:
            raise DataError(f"sample {e['id']}: unknown split {e['split']!r}")
        if e["id"] in seen:
            raise DataError(f"sample id {e['id']} appears more than once")
        seen[e["id"]] = e["split"]
    return entries


def _check_label(label, task: str, num_classes: int | None, sid: str):
    if task == "discrete":
        if isinstance(label, bool) or not isinstance(label, int):
            raise DataError(f"sample {sid}: discrete task needs an integer label, got {label!r}")
        if num_classes is not None and not 0 <= label < num_classes:
            raise DataError(f"sample {sid}: label {label} outside [0, {num_classes})")
        return label
    if not (isinstance(label, list) and len(label) == 3):
        raise DataError(f"sample {sid}: continuous task needs 3 floats, got {label!r}")
    return [float(v) for v in label]


class Dataset:
    """All samples of a manifest, loaded into memory."""

    def __init__(self, samples: list[Sample], task: str):
        self.samples = samples
        self.task = task
        self.by_id = {s.id: s for s in samples}

    @classmethod
    def load(cls, root, task: str = "discrete", num_classes: int | None = None,
             dtype=np.float64) -> "Dataset":
        root = Path(root)
        samples = []
        for e in load_manifest(root):
            label = _check_label(e["label"], task, num_classes, e["id"])
            arrays = {}
            for mod in ("audio", "video", "flow"):
                rel = e.get(f"{mod}_path")
                if rel is None:
                    arrays[mod] = None
                    continue
                path = root / rel
                if not path.is_file():
                    raise DataError(f"sample {e['id']}: missing {mod} file {path}")
                arrays[mod] = read_feature_file(path).astype(dtype)
            if arrays["audio"] is None or arrays["video"] is None:
                raise DataError(f"sample {e['id']}: audio and video streams are required")
            samples.append(Sample(e["id"], e["split"], label, **arrays))
        return cls(samples, task)

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]


def collate(samples: list[Sample], task: str) -> Batch:
    if not samples:
        raise DataError("cannot collate an empty batch")
    shapes = {(s.audio.shape, s.video.shape, None if s.flow is None else s.flow.shape) for s in samples}
    if len(shapes) != 1:
        raise DataError(f"samples in a batch must share shapes, got {sorted(map(str, shapes))}")
    flow = None if samples[0].flow is None else np.stack([s.flow for s in samples])
    dtype = np.int64 if task == "discrete" else samples[0].audio.dtype
    return Batch(
        ids=[s.id for s in samples],
        audio=np.stack([s.audio for s in samples]),
        video=np.stack([s.video for s in samples]),
        flow=flow,
        labels=np.asarray([s.label for s in samples], dtype=dtype),
    )


def batch_iter(dataset: Dataset, split: str, batch_size: int, rng: Rng | None = None):
    """Yield batches of ``split``; shuffled by ``rng`` when given.  The last
    batch may be short."""
    items = dataset.split(split)
    if not items:
        raise DataError(f"split {split!r} is empty")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(items)) if rng is not None else np.arange(len(items))
    for start in range(0, len(items), batch_size):
        yield collate([items[i] for i in order[start:start + batch_size]], dataset.task)
