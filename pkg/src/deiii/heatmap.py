"""Attention-matrix export as fixed-point CSV and 8-bit binary PGM."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def matrix_csv(weights: np.ndarray) -> str:
    """One row per query, one column per key, 6 decimals."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"expected a 2-d attention matrix, got shape {w.shape}")
    return "".join(",".join(f"{v:.6f}" for v in row) + "\n" for row in w)


def read_matrix_csv(text: str) -> np.ndarray:
    return np.array([[float(v) for v in line.split(",")] for line in text.strip().splitlines()])


def matrix_pgm(weights: np.ndarray) -> bytes:
    """Grayscale P5 image, min-max scaled per matrix.  A constant matrix
    renders all white."""
    w = np.asarray(weights, dtype=np.float64)
    lo, hi = w.min(), w.max()
    if hi > lo:
        pix = np.rint(255.0 * (w - lo) / (hi - lo))
    else:
        pix = np.full(w.shape, 255.0)
    rows, cols = w.shape
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + pix.astype(np.uint8).tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    cols, rows = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(rows, cols)


def export_heatmap(weights: np.ndarray, stem) -> tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = stem.with_suffix(".csv")
    pgm_path = stem.with_suffix(".pgm")
    csv_path.write_text(matrix_csv(weights))
    pgm_path.write_bytes(matrix_pgm(weights))
    return csv_path, pgm_path
