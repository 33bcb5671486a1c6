"""Neural building blocks: linear, self-attention, Conformer and transformer
blocks, encoder stacks and MLP heads.

Inputs are batched ``[B, T, D]`` tensors (or ``[B, D]`` for heads).  All
parameters are :class:`~deiii.autodiff.Tensor` leaves collected by
:meth:`Module.named_parameters` in attribute insertion order, which gives a
stable naming scheme for checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, ShapeError, Tensor


class Module:
    """Minimal parameter container.

    Parameters are tensors with ``requires_grad``; submodules and lists of
    submodules are traversed recursively.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()


def glorot(rng: Rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape)


def _param(value: np.ndarray, name: str) -> Tensor:
    return ad.tensor(value, requires_grad=True, name=name)


class Linear(Module):
    """``y = x W + b`` applied over the last axis."""

    def __init__(self, d_in: int, d_out: int, rng: Rng, bias: bool = True):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = _param(glorot(rng, d_in, d_out, (d_in, d_out)), "weight")
        self.bias = _param(np.zeros(d_out), "bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"linear: expected last dim {self.d_in}, got input shape {x.shape}")
        y = x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y


def linear_forward(layer: Linear, x: Tensor) -> Tensor:
    return layer(x)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = _param(np.ones(dim), "gain")
        self.shift = _param(np.zeros(dim), "shift")

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x) * self.gain + self.shift


def dropout(x: Tensor, p: float, rng: Rng | None) -> Tensor:
    if p <= 0 or rng is None:
        return x
    keep = rng.generator.random(x.shape) >= p
    return x * ad.constant(keep / (1.0 - p), dtype=x.dtype)


@dataclass
class AttentionRecord:
    """Attention weights captured during a forward pass.

    ``weights`` has shape ``[B, n_query, n_key]`` (``[B, T, 2]`` for OV
    fusion, whose "keys" are the flow and frame streams).
    """

    weights: np.ndarray
    query: str
    key: str

    def row_sums(self) -> np.ndarray:
        return self.weights.sum(axis=-1)


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: Rng):
        if dim % heads:
            raise ShapeError(f"mhsa: model dim {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        x = ad.reshape(x, (b, t, self.heads, self.dim // self.heads))
        return ad.transpose(x, (0, 2, 1, 3))

    def __call__(self, x: Tensor) -> tuple[Tensor, AttentionRecord]:
        b, t, _ = x.shape
        dh = self.dim // self.heads
        q = self._split(self.q(x))
        k = self._split(self.k(x))
        v = self._split(self.v(x))
        scores = ad.scale(q @ ad.transpose(k), 1.0 / math.sqrt(dh))
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.transpose(attn @ v, (0, 2, 1, 3))
        ctx = ad.reshape(ctx, (b, t, self.dim))
        return self.out(ctx), AttentionRecord(attn.value, "self", "self")


def mhsa_forward(layer: MultiHeadSelfAttention, x: Tensor) -> tuple[Tensor, AttentionRecord]:
    return layer(x)


class FeedForward(Module):
    """Pre-norm position-wise FFN with silu: ``W2 silu(W1 LN(x))``."""

    def __init__(self, dim: int, rng: Rng, expansion: int = 4, dropout: float = 0.0):
        self.norm = LayerNorm(dim)
        self.fc1 = Linear(dim, dim * expansion, rng)
        self.fc2 = Linear(dim * expansion, dim, rng)
        self.p = dropout

    def __call__(self, x: Tensor, rng: Rng | None = None) -> Tensor:
        h = ad.silu(self.fc1(self.norm(x)))
        return dropout(self.fc2(h), self.p, rng)


class ConvModule(Module):
    """Conformer convolution sublayer.

    LN -> pointwise (D -> 2D) -> GLU -> depthwise conv over time (kernel K,
    same padding) -> LN -> silu -> pointwise (D -> D).
    """

    def __init__(self, dim: int, kernel: int, rng: Rng, dropout: float = 0.0):
        if kernel < 1 or kernel % 2 == 0:
            raise ValueError(f"conv kernel must be a positive odd integer, got {kernel}")
        self.dim = dim
        self.kernel = kernel
        self.norm = LayerNorm(dim)
        self.pw1 = Linear(dim, 2 * dim, rng)
        self.dw_weight = _param(glorot(rng, kernel, kernel, (kernel, dim)), "dw_weight")
        self.dw_bias = _param(np.zeros(dim), "dw_bias")
        self.conv_norm = LayerNorm(dim)
        self.pw2 = Linear(dim, dim, rng)
        self.p = dropout

    def depthwise(self, x: Tensor) -> Tensor:
        b, t, c = x.shape
        pad = (self.kernel - 1) // 2
        if pad:
            zeros = ad.constant(np.zeros((b, pad, c)), dtype=x.dtype)
            x = ad.concat([zeros, x, zeros], axis=1)
        out = None
        for k in range(self.kernel):
            term = x[:, k:k + t, :] * self.dw_weight[k]
            out = term if out is None else out + term
        return out + self.dw_bias

    def __call__(self, x: Tensor, rng: Rng | None = None) -> Tensor:
        h = self.pw1(self.norm(x))
        h = h[..., : self.dim] * ad.sigmoid(h[..., self.dim:])
        h = self.depthwise(h)
        h = ad.silu(self.conv_norm(h))
        return dropout(self.pw2(h), self.p, rng)


class ConformerBlock(Module):
    """Macaron Conformer block.

    ``x1 = x + FFN1(x)/2``, ``x2 = x1 + MHSA(LN(x1))``, ``x3 = x2 + Conv(x2)``,
    ``out = LN(x3 + FFN2(x3)/2)``.
    """

    def __init__(self, dim: int, heads: int, kernel: int, rng: Rng,
                 expansion: int = 4, dropout: float = 0.0):
        self.ffn1 = FeedForward(dim, rng.child("ffn1"), expansion, dropout)
        self.attn_norm = LayerNorm(dim)
        self.mhsa = MultiHeadSelfAttention(dim, heads, rng.child("mhsa"))
        self.conv = ConvModule(dim, kernel, rng.child("conv"), dropout)
        self.ffn2 = FeedForward(dim, rng.child("ffn2"), expansion, dropout)
        self.final_norm = LayerNorm(dim)
        self.p = dropout

    def __call__(self, x: Tensor, rng: Rng | None = None) -> Tensor:
        x = x + ad.scale(self.ffn1(x, rng), 0.5)
        a, _ = self.mhsa(self.attn_norm(x))
        x = x + dropout(a, self.p, rng)
        x = x + self.conv(x, rng)
        x = x + ad.scale(self.ffn2(x, rng), 0.5)
        return self.final_norm(x)


def conformer_block_forward(block: ConformerBlock, x: Tensor) -> Tensor:
    return block(x)


class TransformerBlock(Module):
    """Pre-norm transformer encoder block: ``x + MHSA(LN x)`` then ``+ FFN``."""

    def __init__(self, dim: int, heads: int, rng: Rng, expansion: int = 4, dropout: float = 0.0):
        self.attn_norm = LayerNorm(dim)
        self.mhsa = MultiHeadSelfAttention(dim, heads, rng.child("mhsa"))
        self.ffn = FeedForward(dim, rng.child("ffn"), expansion, dropout)
        self.p = dropout

    def __call__(self, x: Tensor, rng: Rng | None = None) -> Tensor:
        a, _ = self.mhsa(self.attn_norm(x))
        x = x + dropout(a, self.p, rng)
        return x + self.ffn(x, rng)


def transformer_block_forward(block: TransformerBlock, x: Tensor) -> Tensor:
    return block(x)


def sinusoidal_positions(t: int, dim: int) -> np.ndarray:
    pos = np.arange(t)[:, None]
    freq = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((t, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq[: dim // 2])
    return table


class EncoderStack(Module):
    """Input projection followed by a stack of Conformer or transformer blocks."""

    def __init__(self, d_in: int, dim: int, n_blocks: int, heads: int, kernel: int, rng: Rng,
                 kind: str = "conformer", expansion: int = 4, dropout: float = 0.0,
                 positional: bool = False):
        if kind not in ("conformer", "transformer"):
            raise ValueError(f"unknown block kind {kind!r}")
        self.kind = kind
        self.dim = dim
        self.positional = positional
        self.proj = Linear(d_in, dim, rng.child("proj")) if d_in is not None else None
        blocks = []
        for i in range(n_blocks):
            r = rng.child(f"block{i}")
            if kind == "conformer":
                blocks.append(ConformerBlock(dim, heads, kernel, r, expansion, dropout))
            else:
                blocks.append(TransformerBlock(dim, heads, r, expansion, dropout))
        self.blocks = blocks

    def project(self, x: Tensor) -> Tensor:
        if self.proj is not None:
            x = self.proj(x)
        if self.positional:
            x = x + ad.constant(sinusoidal_positions(x.shape[1], self.dim), dtype=x.dtype)
        return x

    def encode(self, x: Tensor, rng: Rng | None = None) -> Tensor:
        for block in self.blocks:
            x = block(x, rng)
        return x

    def __call__(self, x: Tensor, rng: Rng | None = None) -> Tensor:
        return self.encode(self.project(x), rng)


class MLPHead(Module):
    """Two linear layers with a silu in between."""

    def __init__(self, d_in: int, hidden: int, d_out: int, rng: Rng):
        self.d_in = d_in
        self.fc1 = Linear(d_in, hidden, rng.child("fc1"))
        self.fc2 = Linear(hidden, d_out, rng.child("fc2"))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"mlp head: expected input dim {self.d_in}, got shape {x.shape}")
        return self.fc2(ad.silu(self.fc1(x)))


def mlp_head_forward(head: MLPHead, x: Tensor) -> Tensor:
    return head(x)
