"""Cross-stream fusion: pairwise optical-flow/frame fusion, inter-modal
attention enhancement, and temporal max pooling.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, ShapeError, Tensor
from .nn import AttentionRecord, Linear, Module

ZERO_NORM = 1e-12


class DegenerateAttentionError(ValueError):
    """Cosine similarity is undefined for a zero-norm projected vector."""


class OvFusion(Module):
    """Convex per-timestep mix of projected flow and frame features.

    A linear layer maps ``[o_i : v_i]`` to two logits, a softmax turns them
    into ``(beta_o, beta_v)``, and the output is
    ``beta_o * W_o o_i + beta_v * W_v v_i``.
    """

    def __init__(self, dim: int, rng: Rng):
        self.dim = dim
        self.fc = Linear(2 * dim, 2, rng.child("fc"))
        self.w_o = Linear(dim, dim, rng.child("w_o"), bias=False)
        self.w_v = Linear(dim, dim, rng.child("w_v"), bias=False)

    def __call__(self, o_bar: Tensor, v_bar: Tensor) -> tuple[Tensor, AttentionRecord]:
        if o_bar.shape != v_bar.shape:
            raise ShapeError(f"ov_fuse: flow shape {o_bar.shape} != frame shape {v_bar.shape}")
        beta = ad.softmax(self.fc(ad.concat([o_bar, v_bar], axis=-1)), axis=-1)
        out = beta[..., 0:1] * self.w_o(o_bar) + beta[..., 1:2] * self.w_v(v_bar)
        return out, AttentionRecord(beta.value, "time", "flow|frame")


def ov_fuse(params: OvFusion, o_bar: Tensor, v_bar: Tensor) -> tuple[Tensor, AttentionRecord]:
    return params(o_bar, v_bar)


def l2_normalize(x: Tensor, what: str) -> Tensor:
    norm = ad.sqrt(ad.sum_(x * x, axis=-1, keepdims=True))
    small = norm.value < ZERO_NORM
    if small.any():
        where = tuple(int(i) for i in np.argwhere(small)[0][:-1])
        raise DegenerateAttentionError(
            f"ife_attend: projected {what} at index {where} has zero norm; cosine similarity undefined"
        )
    return x / norm


class IfeBlock(Module):
    """Single-head cosine cross-attention with two residual paths.

    ``s_ij = cos(W_q q_i, W_k k_j)``, ``alpha = softmax_j(s)``,
    ``r_i = sum_j alpha_ij W_val k_j + q_i``, ``out_i = r_i + FFB(r_i)``.
    With ``temperature`` on, ``s`` is multiplied by a learnable ``exp(t)``.
    """

    def __init__(self, dim: int, rng: Rng, query: str, key: str,
                 expansion: int = 4, temperature: bool = False):
        self.dim = dim
        self.query_label = query
        self.key_label = key
        self.w_q = Linear(dim, dim, rng.child("w_q"), bias=False)
        self.w_k = Linear(dim, dim, rng.child("w_k"), bias=False)
        self.w_val = Linear(dim, dim, rng.child("w_val"), bias=False)
        self.ffb1 = Linear(dim, expansion * dim, rng.child("ffb1"))
        self.ffb2 = Linear(expansion * dim, dim, rng.child("ffb2"))
        self.log_temp = ad.tensor(np.zeros(1), name="log_temp") if temperature else None

    def similarity(self, queries: Tensor, keys: Tensor) -> Tensor:
        if keys.shape[-2] < 1:
            raise ShapeError("ife_attend: empty key set")
        qn = l2_normalize(self.w_q(queries), "query")
        kn = l2_normalize(self.w_k(keys), "key")
        return qn @ ad.transpose(kn)

    def __call__(self, queries: Tensor, keys: Tensor) -> tuple[Tensor, AttentionRecord]:
        if queries.ndim != keys.ndim or queries.shape[:-2] != keys.shape[:-2]:
            raise ShapeError(f"ife_attend: query shape {queries.shape} vs key shape {keys.shape}")
        s = self.similarity(queries, keys)
        if self.log_temp is not None:
            s = s * ad.exp(self.log_temp)
        alpha = ad.softmax(s, axis=-1)
        r = alpha @ self.w_val(keys) + queries
        out = r + self.ffb2(ad.silu(self.ffb1(r)))
        return out, AttentionRecord(alpha.value, self.query_label, self.key_label)


def ife_attend(params: IfeBlock, queries: Tensor, keys: Tensor) -> tuple[Tensor, AttentionRecord]:
    return params(queries, keys)


def temporal_max_pool(x: Tensor) -> Tensor:
    """Max over the time axis (second to last); ``[.., T, D] -> [.., D]``."""
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ShapeError(f"temporal_max_pool: need a non-empty sequence, got shape {x.shape}")
    return ad.max_(x, axis=-2)
