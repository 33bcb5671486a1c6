"""Synthetic audio/video/flow datasets with controlled class evidence.

Each modality has its own set of orthonormal cue directions.  A sample's
cue in a modality is added (scaled by ``signal``) on top of Gaussian noise at
a random subset of time steps.  ``mode`` decides which modality carries
which cue:

``all``         audio, video and flow all carry the class
``audio-only``  only audio carries the class (likewise ``video-only``, ``flow-only``)
``joint-only``  audio carries cue ``a`` and video carries ``(y - a) mod C``
                where ``a`` is balanced independently of ``y``; neither stream
                alone says anything about the class

Flow is generated as per-step motion between consecutive frames, summed
over each ``(i, j)`` frame pair from :func:`pair_flow_frames`, aligned back
to frames and normalized per clip.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import Rng
from .features import write_feature_file
from .flow import align_flow_to_frames, normalize_flow, pair_flow_frames

MODES = ("all", "audio-only", "video-only", "flow-only", "joint-only")
MODALITIES = ("audio", "video", "flow")


@dataclass
class SynthSpec:
    classes: int = 4
    audio_dim: int = 16
    video_dim: int = 16
    flow_dim: int = 16
    n_frames: int = 8
    n_audio: int = 6
    mode: str = "all"
    noise: float = 0.8
    signal: float = 2.0
    cue_fraction: float = 0.5
    splits: dict = field(default_factory=lambda: {"train": 200, "val": 50, "test": 50})
    task: str = "discrete"
    window: int = 1
    stride: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown synth mode {self.mode!r}; expected one of {MODES}")
        if self.task not in ("discrete", "continuous"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        for name in ("audio_dim", "video_dim", "flow_dim", "n_audio"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_frames < 2:
            raise ValueError("n_frames must be at least 2 (flow needs frame pairs)")
        if self.noise < 0 or self.signal < 0:
            raise ValueError("noise and signal must be non-negative")
        if not 0 < self.cue_fraction <= 1:
            raise ValueError("cue_fraction must lie in (0, 1]")
        for name in ("audio_dim", "video_dim", "flow_dim"):
            dim = getattr(self, name)
            if self.classes > dim:
                raise ValueError(
                    f"infeasible synth spec: {self.classes} classes need {self.classes} orthogonal "
                    f"directions but {name} is {dim}"
                )
        if set(self.splits) - {"train", "val", "test"} or any(v < 0 for v in self.splits.values()):
            raise ValueError(f"splits must map train/val/test to counts, got {self.splits}")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthSample:
    id: str
    split: str
    label: object
    audio: np.ndarray
    video: np.ndarray
    flow: np.ndarray
    cues: dict


def cue_directions(rng: Rng, count: int, dim: int) -> np.ndarray:
    """``count`` orthonormal rows in ``R^dim``."""
    q, _ = np.linalg.qr(rng.normal((dim, count)))
    return q.T.copy()


def _stream(rng: Rng, length: int, dim: int, spec: SynthSpec, direction: np.ndarray | None) -> np.ndarray:
    x = rng.normal((length, dim), spec.noise)
    if direction is not None:
        k = max(1, int(round(spec.cue_fraction * length)))
        pos = np.sort(rng.generator.choice(length, size=k, replace=False))
        x[pos] += spec.signal * direction
    return x


def _cue_plan(spec: SynthSpec, labels: np.ndarray, rng: Rng) -> list[dict]:
    c = spec.classes
    plans = []
    if spec.mode == "joint-only":
        # audio cue cycles per class, then permuted, so it is balanced and
        # independent of the label
        seen = np.zeros(c, dtype=np.int64)
        offset = rng.integers(0, c, size=c)
        audio_cue = np.empty_like(labels)
        for i, y in enumerate(labels):
            audio_cue[i] = (offset[y] + seen[y]) % c
            seen[y] += 1
        for y, a in zip(labels, audio_cue):
            plans.append({"audio": int(a), "video": int((y - a) % c), "flow": None})
        return plans
    for y in labels:
        y = int(y)
        plans.append({
            "audio": y if spec.mode in ("all", "audio-only") else None,
            "video": y if spec.mode in ("all", "video-only") else None,
            "flow": y if spec.mode in ("all", "flow-only") else None,
        })
    return plans


def generate(spec: SynthSpec) -> tuple[list[SynthSample], dict[str, np.ndarray]]:
    """Generate samples in memory; also returns the cue directions per modality."""
    spec.validate()
    root = Rng(spec.seed)
    dirs = {
        "audio": cue_directions(root.child("dir-audio"), spec.classes, spec.audio_dim),
        "video": cue_directions(root.child("dir-video"), spec.classes, spec.video_dim),
        "flow": cue_directions(root.child("dir-flow"), spec.classes, spec.flow_dim),
    }
    prototypes = root.child("prototypes").uniform(-1.0, 1.0, (spec.classes, 3))
    pairs = pair_flow_frames(spec.n_frames, spec.window, spec.stride)
    samples: list[SynthSample] = []
    idx = 0
    for split in ("train", "val", "test"):
        count = spec.splits.get(split, 0)
        srng = root.child(f"split-{split}")
        labels = srng.permutation(np.arange(count) % spec.classes)
        plans = _cue_plan(spec, labels, srng)
        for y, plan in zip(labels, plans):
            r = srng.child(f"sample-{idx}")
            audio = _stream(r, spec.n_audio, spec.audio_dim, spec,
                            None if plan["audio"] is None else dirs["audio"][plan["audio"]])
            video = _stream(r, spec.n_frames, spec.video_dim, spec,
                            None if plan["video"] is None else dirs["video"][plan["video"]])
            motion = _stream(r, spec.n_frames - 1, spec.flow_dim, spec,
                             None if plan["flow"] is None else dirs["flow"][plan["flow"]])
            per_pair = np.stack([motion[i:j].sum(axis=0) for i, j in pairs])
            flow = normalize_flow(align_flow_to_frames(per_pair, pairs, spec.n_frames))
            if spec.task == "discrete":
                label: object = int(y)
            else:
                label = (prototypes[y] + r.normal(3, 0.05)).tolist()
            samples.append(SynthSample(f"s{idx:05d}", split, label, audio, video, flow, plan))
            idx += 1
    return samples, dirs


def synth_generate(spec: SynthSpec, root, force: bool = False) -> Path:
    """Write ``<root>/manifest.json`` and ``<root>/features/<id>.<modality>.def1``."""
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        if not force:
            raise FileExistsError(f"output directory {root} is not empty (use --force)")
        shutil.rmtree(root)
    samples, _ = generate(spec)
    feat = root / "features"
    feat.mkdir(parents=True, exist_ok=True)
    manifest = []
    for s in samples:
        entry = {"id": s.id}
        for mod in MODALITIES:
            rel = f"features/{s.id}.{mod}.def1"
            write_feature_file(root / rel, getattr(s, mod).astype(np.float32), dtype_code=0)
            entry[f"{mod}_path"] = rel
        entry["label"] = s.label
        entry["split"] = s.split
        manifest.append(entry)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return root
