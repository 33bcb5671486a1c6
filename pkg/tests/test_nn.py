import math

import numpy as np
import pytest

from deiii import autodiff as ad
from deiii.autodiff import Rng, ShapeError, grad_check_params
from deiii.nn import (ConformerBlock, ConvModule, EncoderStack, Linear, MLPHead, MultiHeadSelfAttention,
                      TransformerBlock, conformer_block_forward, linear_forward, mhsa_forward,
                      mlp_head_forward, sinusoidal_positions, transformer_block_forward)


def zero_all(module, keep=()):
    for name, p in module.named_parameters():
        if not any(name.startswith(k) for k in keep):
            p.value[...] = 0.0


def layer_norm_ref(x, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


# linear

def test_linear_identity_and_zero_weight():
    lin = Linear(3, 3, Rng(0))
    lin.weight.value[...] = np.eye(3)
    x = ad.constant(Rng(1).normal((2, 3)))
    assert np.array_equal(linear_forward(lin, x).value, x.value)
    lin.weight.value[...] = 0.0
    lin.bias.value[...] = 1.0
    assert np.array_equal(lin(x).value, np.ones((2, 3)))


def test_linear_worked_example():
    lin = Linear(2, 2, Rng(0))
    lin.weight.value[...] = [[1.0, 0.0], [0.0, 2.0]]
    lin.bias.value[...] = [1.0, 1.0]
    x = [[1.0, 2.0]]
    ref = [[sum(x[0][k] * lin.weight.value[k, j] for k in range(2)) + 1.0 for j in range(2)]]
    assert ref == [[2.0, 5.0]]
    assert np.array_equal(lin(ad.constant(x)).value, ref)


def test_linear_rejects_dim_mismatch():
    with pytest.raises(ShapeError, match="linear"):
        Linear(3, 2, Rng(0))(ad.constant(np.ones((1, 4))))


def test_glorot_bounds():
    lin = Linear(10, 6, Rng(5))
    a = math.sqrt(6 / 16)
    assert np.all(np.abs(lin.weight.value) <= a)
    assert np.all(lin.bias.value == 0)


# mhsa

def mhsa_loop_reference(layer, x):
    """Explicit loops over batch, heads and positions."""
    w = {n: p.value for n, p in layer.named_parameters()}
    b_, t, d = x.shape
    h = layer.heads
    dh = d // h
    out = np.zeros_like(x)
    for b in range(b_):
        q = x[b] @ w["q.weight"] + w["q.bias"]
        k = x[b] @ w["k.weight"] + w["k.bias"]
        v = x[b] @ w["v.weight"] + w["v.bias"]
        ctx = np.zeros((t, d))
        for head in range(h):
            sl = slice(head * dh, (head + 1) * dh)
            for i in range(t):
                scores = [sum(q[i, sl][c] * k[j, sl][c] for c in range(dh)) / math.sqrt(dh) for j in range(t)]
                m = max(scores)
                e = [math.exp(s - m) for s in scores]
                z = sum(e)
                for j in range(t):
                    ctx[i, sl] += e[j] / z * v[j, sl]
        out[b] = ctx @ w["out.weight"] + w["out.bias"]
    return out


def test_mhsa_matches_loop_oracle():
    rng = Rng(11)
    layer = MultiHeadSelfAttention(4, 2, rng)
    for p in layer.parameters():
        p.value[...] = rng.normal(p.shape, 0.5)
    x = rng.normal((2, 3, 4))
    out, rec = mhsa_forward(layer, ad.constant(x))
    assert np.allclose(out.value, mhsa_loop_reference(layer, x), atol=1e-12)
    assert rec.weights.shape == (2, 2, 3, 3)
    assert np.all(np.abs(rec.row_sums() - 1) < 1e-12)


def test_mhsa_single_token():
    rng = Rng(2)
    layer = MultiHeadSelfAttention(4, 2, rng)
    x = ad.constant(rng.normal((1, 1, 4)))
    out, rec = layer(x)
    assert np.array_equal(rec.weights, np.ones((1, 2, 1, 1)))
    expected = layer.out(layer.v(x)).value
    assert np.allclose(out.value, expected, atol=1e-14)


def test_mhsa_identical_tokens_uniform():
    layer = MultiHeadSelfAttention(4, 2, Rng(3))
    x = np.tile(Rng(4).normal((1, 1, 4)), (1, 5, 1))
    _, rec = layer(ad.constant(x))
    assert np.allclose(rec.weights, 0.2, atol=1e-15)


def test_mhsa_rejects_indivisible_heads():
    with pytest.raises(ShapeError):
        MultiHeadSelfAttention(6, 4, Rng(0))


# conformer / transformer

@pytest.mark.parametrize("t", [1, 2, 9])
def test_conformer_preserves_shape(t):
    block = ConformerBlock(8, 2, 3, Rng(0))
    x = ad.constant(Rng(1).normal((2, t, 8)))
    assert conformer_block_forward(block, x).shape == (2, t, 8)


def test_conformer_zero_sublayers_is_layer_norm():
    block = ConformerBlock(8, 2, 3, Rng(0))
    zero_all(block, keep=("final_norm",))
    x = Rng(1).normal((2, 4, 8))
    assert np.allclose(block(ad.constant(x)).value, layer_norm_ref(x), atol=1e-12)


def test_conv_module_rejects_even_kernel():
    with pytest.raises(ValueError):
        ConvModule(4, 4, Rng(0))


def test_depthwise_same_padding_matches_loop():
    conv = ConvModule(3, 3, Rng(2))
    x = Rng(3).normal((1, 5, 3))
    out = conv.depthwise(ad.constant(x)).value
    w, b = conv.dw_weight.value, conv.dw_bias.value
    ref = np.zeros((1, 5, 3))
    for t in range(5):
        for k in range(3):
            s = t + k - 1
            if 0 <= s < 5:
                ref[0, t] += w[k] * x[0, s]
        ref[0, t] += b
    assert np.allclose(out, ref, atol=1e-14)


@pytest.mark.parametrize("t", [1, 4, 7])
def test_transformer_zero_weights_identity(t):
    block = TransformerBlock(8, 2, Rng(0))
    zero_all(block)
    x = Rng(1).normal((1, t, 8))
    out = transformer_block_forward(block, ad.constant(x))
    assert out.shape == (1, t, 8)
    assert np.array_equal(out.value, x)


def test_encoder_stack_kinds_and_projection():
    stack = EncoderStack(5, 8, 2, 2, 3, Rng(0))
    assert stack(ad.constant(np.ones((1, 3, 5)))).shape == (1, 3, 8)
    trans = EncoderStack(5, 8, 2, 2, 3, Rng(0), kind="transformer")
    assert all(isinstance(b, TransformerBlock) for b in trans.blocks)
    assert EncoderStack(None, 8, 1, 2, 3, Rng(0)).proj is None
    with pytest.raises(ValueError):
        EncoderStack(5, 8, 1, 2, 3, Rng(0), kind="lstm")


def test_sinusoidal_positions():
    table = sinusoidal_positions(4, 6)
    assert table.shape == (4, 6)
    assert np.array_equal(table[0], [0, 1, 0, 1, 0, 1])


# heads

def test_mlp_head_zero_and_class_counts():
    head = MLPHead(8, 16, 6, Rng(0))
    x = ad.constant(Rng(1).normal((3, 8)))
    assert mlp_head_forward(head, x).shape == (3, 6)
    assert MLPHead(16, 16, 3, Rng(0))(ad.constant(np.ones((2, 16)))).shape == (2, 3)
    zero_all(head)
    assert np.array_equal(head(x).value, np.zeros((3, 6)))
    with pytest.raises(ShapeError, match="mlp head"):
        head(ad.constant(np.ones((1, 7))))


# gradients at tiny dims: T=3, D=8, H=2, K=3

def _check_block(block, x, call):
    xt = ad.constant(x)
    w = ad.constant(Rng(77).normal(call(block, xt).shape))
    err = grad_check_params(lambda: ad.sum_(call(block, xt) * w), block.parameters(), h=1e-4,
                            rng=Rng(5), per_param=6)
    assert err < 1e-4, err


@pytest.mark.parametrize("kind", ["linear", "mhsa", "conformer", "transformer", "head"])
def test_block_gradients(kind):
    rng = Rng(8)
    x = rng.normal((2, 3, 8))
    if kind == "linear":
        _check_block(Linear(8, 5, rng), x, lambda b, t: b(t))
    elif kind == "mhsa":
        _check_block(MultiHeadSelfAttention(8, 2, rng), x, lambda b, t: b(t)[0])
    elif kind == "conformer":
        _check_block(ConformerBlock(8, 2, 3, rng), x, lambda b, t: b(t))
    elif kind == "transformer":
        _check_block(TransformerBlock(8, 2, rng), x, lambda b, t: b(t))
    else:
        _check_block(MLPHead(8, 8, 4, rng), x[:, 0], lambda b, t: b(t))


def test_input_gradient_through_conformer():
    block = ConformerBlock(8, 2, 3, Rng(9))
    w = ad.constant(Rng(10).normal((1, 3, 8)))
    err = ad.grad_check(lambda t: ad.sum_(block(t) * w), Rng(11).normal((1, 3, 8)))
    assert err < 1e-4
