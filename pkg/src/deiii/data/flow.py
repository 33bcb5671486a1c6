"""Optical-flow stream preparation: magnitude normalization and frame pairing."""

from __future__ import annotations

import numpy as np

SIGMA_FLOOR = 1e-12


def normalize_flow(flow: np.ndarray) -> np.ndarray:
    """Divide a clip's flow features by their population standard deviation.

    The deviation is taken over every element of the clip.  Clips whose
    deviation is below ``1e-12`` (e.g. all zeros) are returned unchanged.
    """
    flow = np.asarray(flow)
    if flow.ndim != 2 or flow.shape[0] < 1:
        raise ValueError(f"normalize_flow: expected [n, D] with n >= 1, got {flow.shape}")
    sigma = float(np.std(flow))
    if sigma < SIGMA_FLOOR:
        return flow.copy()
    return flow / sigma


def pair_flow_frames(n_frames: int, window: int = 1, stride: int = 1) -> list[tuple[int, int]]:
    """Frame index pairs ``(i, min(i + window, n - 1))`` for ``i = 0, stride, ...``."""
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    if n_frames < 2:
        raise ValueError(f"pair_flow_frames: need at least 2 frames, got {n_frames}")
    last = n_frames - 1
    return [(i, min(i + window, last)) for i in range(0, last, stride)]


def align_flow_to_frames(flows: np.ndarray, pairs: list[tuple[int, int]], n_frames: int) -> np.ndarray:
    """Spread per-pair flows over ``n_frames`` slots.

    Frame ``t`` takes the flow of the latest pair ending at or before ``t``;
    frames before the first pair end get a zero flow.  For window = stride = 1
    this is the pair sequence front-padded with a single zero row.
    """
    flows = np.asarray(flows)
    if len(flows) != len(pairs):
        raise ValueError(f"{len(flows)} flows for {len(pairs)} pairs")
    out = np.zeros((n_frames,) + flows.shape[1:], dtype=flows.dtype)
    ends = [j for _, j in pairs]
    k = -1
    for t in range(n_frames):
        while k + 1 < len(ends) and ends[k + 1] <= t:
            k += 1
        if k >= 0:
            out[t] = flows[k]
    return out
