import json
import struct

import numpy as np
import pytest

from deiii.autodiff import Rng
from deiii.data.dataset import DataError, Dataset, batch_iter, collate, load_manifest
from deiii.data.features import (FeatureFileError, decode_tensor, encode_tensor, read_checkpoint,
                                 read_feature_file, write_checkpoint, write_feature_file)
from deiii.data.flow import align_flow_to_frames, normalize_flow, pair_flow_frames
from deiii.data.synth import SynthSpec, generate, synth_generate


# DEF1

def test_layout_for_2x3():
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    raw = encode_tensor(arr)
    assert len(raw) == 16 + 24
    assert raw[:4] == b"DEF1"
    assert struct.unpack("<HBB", raw[4:8]) == (1, 0, 2)
    assert struct.unpack("<2I", raw[8:16]) == (2, 3)
    assert raw[16:] == arr.astype("<f4").tobytes()


@pytest.mark.parametrize("case", range(100))
def test_roundtrip_bit_identical(tmp_path, case):
    rng = Rng(case)
    rank = int(rng.integers(1, 4))
    shape = tuple(int(s) for s in rng.integers(1, 6, rank))
    dtype = np.float32 if case % 2 else np.float64
    arr = (rng.normal(shape) * 10.0 ** rng.integers(-3, 4)).astype(dtype)
    path = tmp_path / "t.def1"
    write_feature_file(path, arr)
    back = read_feature_file(path)
    assert back.dtype == dtype and back.shape == shape
    assert back.tobytes() == arr.tobytes()


def _corrupt(raw: bytes, offset: int, value: bytes) -> bytes:
    return raw[:offset] + value + raw[offset + len(value):]


def test_corruption_rejected(tmp_path):
    raw = encode_tensor(np.ones((2, 3), dtype=np.float32))
    cases = {
        "magic": _corrupt(raw, 0, b"XXXX"),
        "version": _corrupt(raw, 4, struct.pack("<H", 2)),
        "dtype": _corrupt(raw, 6, b"\x07"),
        "truncated": raw[:-1],
        "header": raw[:6],
        "zero axis": _corrupt(raw, 8, struct.pack("<I", 0)),
        "nan": raw[:16] + np.array([np.nan] * 6, dtype="<f4").tobytes(),
    }
    for what, bad in cases.items():
        path = tmp_path / f"{what}.def1"
        path.write_bytes(bad)
        with pytest.raises(FeatureFileError, match="offset"):
            read_feature_file(path)
    (tmp_path / "trail.def1").write_bytes(raw + b"\0")
    with pytest.raises(FeatureFileError, match="trailing"):
        read_feature_file(tmp_path / "trail.def1")


def test_write_rejects_non_finite():
    with pytest.raises(FeatureFileError):
        encode_tensor(np.array([1.0, np.inf]))


def test_decode_reports_end_offset():
    raw = encode_tensor(np.ones(3)) + encode_tensor(np.zeros((1, 2)))
    a, end = decode_tensor(raw)
    b, end2 = decode_tensor(raw, end)
    assert a.shape == (3,) and b.shape == (1, 2) and end2 == len(raw)


def test_checkpoint_container(tmp_path):
    tensors = {"a.weight": np.arange(6.0).reshape(2, 3), "b": np.ones(2, dtype=np.float32)}
    write_checkpoint(tmp_path / "c.ckpt", tensors, {"k": [1, 2]})
    back, cfg = read_checkpoint(tmp_path / "c.ckpt")
    assert cfg == {"k": [1, 2]}
    assert list(back) == ["a.weight", "b"]
    assert all(back[k].tobytes() == tensors[k].tobytes() for k in tensors)
    (tmp_path / "bad.ckpt").write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(FeatureFileError):
        read_checkpoint(tmp_path / "bad.ckpt")


# flow

def test_normalize_flow_examples():
    assert np.array_equal(normalize_flow(np.zeros((3, 2))), np.zeros((3, 2)))
    out = normalize_flow(np.array([[3.0], [-3.0]]))
    assert np.array_equal(out, [[1.0], [-1.0]])
    x = Rng(0).normal((5, 4))
    assert np.allclose(normalize_flow(x), normalize_flow(7.5 * x), atol=1e-12)
    assert abs(np.std(normalize_flow(x)) - 1) < 1e-9
    with pytest.raises(ValueError):
        normalize_flow(np.zeros((0, 2)))


def test_pair_flow_frames_examples():
    assert pair_flow_frames(4, 1, 1) == [(0, 1), (1, 2), (2, 3)]
    assert pair_flow_frames(7, 3, 3) == [(0, 3), (3, 6)]
    assert pair_flow_frames(2, 5, 1) == [(0, 1)]
    with pytest.raises(ValueError):
        pair_flow_frames(1, 1, 1)
    with pytest.raises(ValueError):
        pair_flow_frames(4, 0, 1)


@pytest.mark.parametrize("n", [2, 3, 8, 13])
def test_adjacent_pairs_cover_each_frame_once(n):
    ends = [j for _, j in pair_flow_frames(n, 1, 1)]
    assert sorted(ends) == list(range(1, n))


def test_align_front_pads_one_zero_row():
    pairs = pair_flow_frames(4, 1, 1)
    flows = np.array([[1.0], [2.0], [3.0]])
    assert np.array_equal(align_flow_to_frames(flows, pairs, 4), [[0.0], [1.0], [2.0], [3.0]])
    wide = align_flow_to_frames(np.array([[5.0], [6.0]]), pair_flow_frames(7, 3, 3), 7)
    assert wide[:, 0].tolist() == [0, 0, 0, 5, 5, 5, 6]


# synth

def small(**kw):
    base = dict(classes=4, audio_dim=8, video_dim=8, flow_dim=8, n_frames=6, n_audio=5,
                splits={"train": 40, "val": 12, "test": 12})
    base.update(kw)
    return SynthSpec(**base)


def test_synth_files_are_deterministic(tmp_path):
    a = synth_generate(small(seed=7), tmp_path / "a")
    b = synth_generate(small(seed=7), tmp_path / "b")
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
    c = synth_generate(small(seed=8), tmp_path / "c")
    assert (a / "features/s00000.audio.def1").read_bytes() != (c / "features/s00000.audio.def1").read_bytes()


def test_synth_refuses_non_empty_dir(tmp_path):
    synth_generate(small(), tmp_path)
    with pytest.raises(FileExistsError):
        synth_generate(small(), tmp_path)
    synth_generate(small(), tmp_path, force=True)


def test_synth_infeasible_spec():
    with pytest.raises(ValueError, match="infeasible"):
        small(classes=4, flow_dim=2).validate()
    with pytest.raises(ValueError, match="unknown"):
        SynthSpec.from_dict({"colour": 1})


def nearest_direction(x, dirs):
    return int(np.argmax((x @ dirs.T).max(axis=0)))


@pytest.mark.parametrize("mode,stream", [("audio-only", "audio"), ("video-only", "video"),
                                         ("flow-only", "flow"), ("all", "video")])
def test_noiseless_single_modality_decodable(mode, stream):
    samples, dirs = generate(small(mode=mode, noise=0.0))
    hits = [nearest_direction(getattr(s, stream), dirs[stream]) == s.label for s in samples]
    assert np.mean(hits) == 1.0


def test_joint_only_needs_both_streams():
    spec = small(mode="joint-only", noise=0.0, splits={"train": 200, "val": 0, "test": 0})
    samples, dirs = generate(spec)
    c = spec.classes
    a = [nearest_direction(s.audio, dirs["audio"]) for s in samples]
    v = [nearest_direction(s.video, dirs["video"]) for s in samples]
    y = [s.label for s in samples]
    assert np.mean(np.equal(a, y)) <= 1 / c + 0.05
    assert np.mean(np.equal(v, y)) <= 1 / c + 0.05
    assert np.mean([(ai + vi) % c == yi for ai, vi, yi in zip(a, v, y)]) == 1.0
    # the audio cue cycles within each class, so its marginal is near uniform
    assert np.abs(np.bincount(a, minlength=c) - 200 / c).max() <= c


def test_joint_only_two_classes_is_xor():
    samples, _ = generate(small(classes=2, mode="joint-only"))
    for s in samples:
        assert s.label == s.cues["audio"] ^ s.cues["video"]


def test_class_balance_and_disjoint_splits():
    samples, _ = generate(small(splits={"train": 41, "val": 10, "test": 13}))
    for split in ("train", "val", "test"):
        counts = np.bincount([s.label for s in samples if s.split == split], minlength=4)
        assert counts.max() - counts.min() <= 1
    ids = [s.id for s in samples]
    assert len(ids) == len(set(ids))


def test_continuous_labels():
    samples, _ = generate(small(task="continuous"))
    assert all(len(s.label) == 3 for s in samples)


def test_synth_flow_is_normalized_and_front_padded():
    samples, _ = generate(small())
    for s in samples[:5]:
        assert np.array_equal(s.flow[0], np.zeros(8))
        assert abs(np.std(s.flow) - 1) < 1e-9


# manifest and batching

def test_manifest_schema(tmp_path):
    synth_generate(small(), tmp_path)
    entries = load_manifest(tmp_path)
    assert set(entries[0]) == {"id", "audio_path", "video_path", "flow_path", "label", "split"}
    ds = Dataset.load(tmp_path, "discrete", 4)
    assert len(ds.split("train")) == 40
    assert ds.by_id["s00000"].video.shape == (6, 8)


def test_manifest_errors(tmp_path):
    with pytest.raises(DataError, match="no manifest"):
        load_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps([{"id": "a"}]))
    with pytest.raises(DataError, match="lacks"):
        load_manifest(tmp_path)
    entry = {"id": "a", "audio_path": "x", "video_path": "y", "label": 0, "split": "train"}
    (tmp_path / "manifest.json").write_text(json.dumps([entry, entry]))
    with pytest.raises(DataError, match="more than once"):
        load_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps([entry]))
    with pytest.raises(DataError, match="missing audio"):
        Dataset.load(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps([{**entry, "label": [1.0]}]))
    with pytest.raises(DataError, match="continuous"):
        Dataset.load(tmp_path, "continuous")


def test_batch_sizes_and_shuffle(tmp_path):
    synth_generate(small(splits={"train": 10, "val": 2, "test": 0}), tmp_path)
    ds = Dataset.load(tmp_path)
    assert [len(b) for b in batch_iter(ds, "train", 3)] == [3, 3, 3, 1]
    assert [len(b) for b in batch_iter(ds, "train", 50)] == [10]
    order1 = [b.ids for b in batch_iter(ds, "train", 4, Rng(3))]
    order2 = [b.ids for b in batch_iter(ds, "train", 4, Rng(3))]
    assert order1 == order2
    assert sorted(sum(order1, [])) == sorted(s.id for s in ds.split("train"))
    with pytest.raises(DataError, match="empty"):
        list(batch_iter(ds, "test", 3))
    with pytest.raises(DataError):
        collate([], "discrete")
