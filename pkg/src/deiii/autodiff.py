"""Reverse-mode automatic differentiation over dense numpy arrays.

Every value in the model is a :class:`Tensor`.  A tensor produced by a
primitive remembers its parents and the primitive that made it, so calling
:func:`backward` on a scalar walks the graph in reverse topological order and
accumulates ``d root / d node`` into ``node.grad``.

Primitives are registered in :data:`PRIMITIVES` as ``(forward, backward)``
pairs and are dispatched through :func:`apply_primitive`.  The arithmetic
primitives follow numpy broadcasting; their backward rules sum the incoming
gradient back down to each operand's shape.

Random numbers come from :class:`Rng`, a thin wrapper around numpy's PCG64
bit generator, whose output stream is specified bit-for-bit and therefore
identical on every platform.
"""

from __future__ import annotations

import contextlib
import zlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Rng",
    "ShapeError",
    "NonFiniteError",
    "PRIMITIVES",
    "apply_primitive",
    "backward",
    "grad_check",
    "precision",
    "set_precision",
    "get_dtype",
    "tensor",
    "constant",
]

_DTYPES = {"f64": np.float64, "f32": np.float32}
_default_dtype = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible with a primitive."""


class NonFiniteError(FloatingPointError):
    """A primitive received or produced NaN/Inf."""


def set_precision(name: str) -> None:
    global _default_dtype
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


def get_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the float type used for new tensors."""
    global _default_dtype
    previous = _default_dtype
    set_precision(name)
    try:
        yield
    finally:
        _default_dtype = previous


class Rng:
    """Seeded random source (numpy PCG64).

    PCG64's stream is fixed by its published algorithm, so one seed gives the
    same draws on every platform.  ``child`` derives independent streams from
    a string label without consuming draws from the parent.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._key: tuple[int, ...] = ()
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, label: str) -> "Rng":
        key = self._key + (zlib.crc32(label.encode("utf-8")),)
        out = Rng.__new__(Rng)
        out.seed = self.seed
        out._key = key
        seq = np.random.SeedSequence(self.seed, spawn_key=key)
        out.generator = np.random.Generator(np.random.PCG64(seq))
        return out

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self.generator.uniform(low, high, size=shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)


class Tensor:
    """A node in the computation graph.

    ``value`` is treated as immutable once the tensor exists.  ``grad`` is
    zero until :func:`backward` runs through this node.
    """

    __slots__ = ("value", "grad", "parents", "op", "attrs", "requires_grad", "name")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 dtype=None, _parents: tuple = (), _op: str | None = None, _attrs=None):
        if _op is None:
            arr = np.array(value, dtype=dtype or _default_dtype)
            _check_finite(arr, "leaf")
        else:
            arr = value
        self.value: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = _parents
        self.op = _op
        self.attrs = _attrs
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def dtype(self):
        return self.value.dtype

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag})\n{self.value}"

    # operators -------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(value, requires_grad: bool = True, name: str | None = None, dtype=None) -> Tensor:
    """Create a leaf that participates in differentiation."""
    return Tensor(value, requires_grad=requires_grad, name=name, dtype=dtype)


def constant(value, dtype=None) -> Tensor:
    return Tensor(value, requires_grad=False, dtype=dtype)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, requires_grad=False, dtype=dtype)


def _check_finite(arr: np.ndarray, where: str) -> None:
    if arr.dtype.kind == "f" and not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr.reshape(-1)))[0])
        raise NonFiniteError(f"{where}: non-finite value at flat index {bad} (shape {arr.shape})")


# -----------------------------------------------------------------------------
# primitive registry
# -----------------------------------------------------------------------------

Forward = Callable[..., np.ndarray]
Backward = Callable[..., Sequence[np.ndarray | None]]

PRIMITIVES: dict[str, tuple[Forward, Backward]] = {}


def _primitive(name: str):
    def register(pair):
        fwd, bwd = pair()
        PRIMITIVES[name] = (fwd, bwd)
        return pair

    return register


def apply_primitive(kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Evaluate primitive ``kind`` on ``inputs`` and record it on the tape.

    ``attrs`` are static (non-differentiable) arguments such as an axis.
    """
    try:
        fwd, _ = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    values = [t.value for t in inputs]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):  # reported by _check_finite
        out = fwd(*values, **attrs)
    _check_finite(out, kind)
    needs = any(t.requires_grad for t in inputs)
    if needs:
        return Tensor(out, requires_grad=True, _parents=tuple(inputs), _op=kind, _attrs=attrs)
    return Tensor(out, requires_grad=False, _op=kind)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_check(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


@_primitive("add")
def _add():
    def fwd(a, b):
        _broadcast_check("add", a, b)
        return a + b

    def bwd(g, out, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return fwd, bwd


@_primitive("sub")
def _sub():
    def fwd(a, b):
        _broadcast_check("sub", a, b)
        return a - b

    def bwd(g, out, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return fwd, bwd


@_primitive("mul")
def _mul():
    def fwd(a, b):
        _broadcast_check("mul", a, b)
        return a * b

    def bwd(g, out, a, b):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

    return fwd, bwd


@_primitive("div")
def _div():
    def fwd(a, b):
        _broadcast_check("div", a, b)
        if np.any(b == 0):
            raise NonFiniteError("div: division by zero")
        return a / b

    def bwd(g, out, a, b):
        return _unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape)

    return fwd, bwd


@_primitive("scale")
def _scale():
    def fwd(a, *, c):
        return a * a.dtype.type(c)

    def bwd(g, out, a, *, c):
        return (g * a.dtype.type(c),)

    return fwd, bwd


@_primitive("matmul")
def _matmul():
    def fwd(a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None
        return np.matmul(a, b)

    def bwd(g, out, a, b):
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return fwd, bwd


@_primitive("transpose")
def _transpose():
    def fwd(a, *, axes):
        if axes is None:
            if a.ndim < 2:
                raise ShapeError(f"transpose: need rank >= 2, got shape {a.shape}")
            return np.swapaxes(a, -1, -2)
        if sorted(axes) != list(range(a.ndim)):
            raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
        return np.transpose(a, axes)

    def bwd(g, out, a, *, axes):
        if axes is None:
            return (np.swapaxes(g, -1, -2),)
        return (np.transpose(g, np.argsort(axes)),)

    return fwd, bwd


@_primitive("reshape")
def _reshape():
    def fwd(a, *, shape):
        try:
            return a.reshape(shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None

    def bwd(g, out, a, *, shape):
        return (g.reshape(a.shape),)

    return fwd, bwd


@_primitive("broadcast")
def _broadcast():
    def fwd(a, *, shape):
        try:
            return np.array(np.broadcast_to(a, shape))
        except ValueError:
            raise ShapeError(f"broadcast: cannot broadcast {a.shape} to {shape}") from None

    def bwd(g, out, a, *, shape):
        return (_unbroadcast(g, a.shape),)

    return fwd, bwd


@_primitive("concat")
def _concat():
    def fwd(*arrays, axis):
        ref = arrays[0]
        ax = axis % ref.ndim
        for arr in arrays[1:]:
            if arr.ndim != ref.ndim or any(
                arr.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
            ):
                raise ShapeError(f"concat: shapes {ref.shape} and {arr.shape} differ off axis {axis}")
        return np.concatenate(arrays, axis=axis)

    def bwd(g, out, *arrays, axis):
        bounds = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]
        return tuple(np.split(g, bounds, axis=axis))

    return fwd, bwd


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, slice, type(None), type(Ellipsis))) for p in parts)


@_primitive("getitem")
def _getitem():
    def fwd(a, *, index):
        try:
            return np.array(a[index])
        except IndexError as exc:
            raise ShapeError(f"getitem: {exc} for shape {a.shape}") from None

    def bwd(g, out, a, *, index):
        ga = np.zeros_like(a)
        if _is_basic(index):
            ga[index] += g
        else:
            np.add.at(ga, index, g)
        return (ga,)

    return fwd, bwd


def _expand(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


@_primitive("sum")
def _sum():
    def fwd(a, *, axis, keepdims):
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def bwd(g, out, a, *, axis, keepdims):
        return (np.array(_expand(g, a.shape, axis, keepdims)),)

    return fwd, bwd


@_primitive("mean")
def _mean():
    def fwd(a, *, axis, keepdims):
        return np.asarray(a.mean(axis=axis, keepdims=keepdims))

    def bwd(g, out, a, *, axis, keepdims):
        count = a.size // max(out.size, 1)
        return (np.array(_expand(g, a.shape, axis, keepdims)) / count,)

    return fwd, bwd


@_primitive("max")
def _max():
    def fwd(a, *, axis, keepdims):
        if a.shape[axis] == 0:
            raise ShapeError(f"max: empty axis {axis} for shape {a.shape}")
        return np.asarray(a.max(axis=axis, keepdims=keepdims))

    def bwd(g, out, a, *, axis, keepdims):
        # first maximal index wins ties
        idx = np.expand_dims(np.argmax(a, axis=axis), axis)
        gk = g if keepdims else np.expand_dims(g, axis)
        ga = np.zeros_like(a)
        np.put_along_axis(ga, idx, gk, axis=axis)
        return (ga,)

    return fwd, bwd


@_primitive("exp")
def _exp():
    def fwd(a):
        return np.exp(a)

    def bwd(g, out, a):
        return (g * out,)

    return fwd, bwd


@_primitive("log")
def _log():
    def fwd(a):
        if np.any(a <= 0):
            raise NonFiniteError("log: non-positive input")
        return np.log(a)

    def bwd(g, out, a):
        return (g / a,)

    return fwd, bwd


@_primitive("sqrt")
def _sqrt():
    def fwd(a):
        if np.any(a < 0):
            raise NonFiniteError("sqrt: negative input")
        return np.sqrt(a)

    def bwd(g, out, a):
        if np.any(out == 0):
            raise NonFiniteError("sqrt: derivative undefined at 0")
        return (g / (2 * out),)

    return fwd, bwd


def _sigmoid_np(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


@_primitive("sigmoid")
def _sigmoid():
    def fwd(a):
        return _sigmoid_np(a)

    def bwd(g, out, a):
        return (g * out * (1 - out),)

    return fwd, bwd


@_primitive("tanh")
def _tanh():
    def fwd(a):
        return np.tanh(a)

    def bwd(g, out, a):
        return (g * (1 - out * out),)

    return fwd, bwd


@_primitive("silu")
def _silu():
    def fwd(a):
        return a * _sigmoid_np(a)

    def bwd(g, out, a):
        s = _sigmoid_np(a)
        return (g * (s + a * s * (1 - s)),)

    return fwd, bwd


@_primitive("relu")
def _relu():
    def fwd(a):
        return np.maximum(a, 0)

    def bwd(g, out, a):
        return (g * (a > 0),)

    return fwd, bwd


@_primitive("softmax")
def _softmax():
    def fwd(a, *, axis):
        z = a - a.max(axis=axis, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=axis, keepdims=True)

    def bwd(g, out, a, *, axis):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return fwd, bwd


LAYER_NORM_EPS = 1e-5


@_primitive("layer_norm")
def _layer_norm():
    # normalizes over the last axis; affine gain/bias are applied outside
    def fwd(a, *, eps):
        mu = a.mean(axis=-1, keepdims=True)
        var = ((a - mu) ** 2).mean(axis=-1, keepdims=True)
        return (a - mu) / np.sqrt(var + eps)

    def bwd(g, out, a, *, eps):
        mu = a.mean(axis=-1, keepdims=True)
        var = ((a - mu) ** 2).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gxm),)

    return fwd, bwd


# -----------------------------------------------------------------------------
# public op helpers
# -----------------------------------------------------------------------------

def _binary(kind: str, a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    if not isinstance(b, Tensor):
        b = _as_tensor(b, a)
    return apply_primitive(kind, (a, b))


def add(a, b) -> Tensor:
    return _binary("add", a, b)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b)


def div(a, b) -> Tensor:
    return _binary("div", a, b)


def scale(a: Tensor, c: float) -> Tensor:
    return apply_primitive("scale", (a,), c=float(c))


def matmul(a, b) -> Tensor:
    return _binary("matmul", a, b)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    return apply_primitive("transpose", (a,), axes=None if axes is None else tuple(axes))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return apply_primitive("reshape", (a,), shape=tuple(shape))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    return apply_primitive("broadcast", (a,), shape=tuple(shape))


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    return apply_primitive("concat", tensors, axis=axis)


def getitem(a: Tensor, index) -> Tensor:
    return apply_primitive("getitem", (a,), index=index)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return apply_primitive("sum", (a,), axis=axis, keepdims=keepdims)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return apply_primitive("mean", (a,), axis=axis, keepdims=keepdims)


def max_(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    return apply_primitive("max", (a,), axis=axis, keepdims=keepdims)


def exp(a: Tensor) -> Tensor:
    return apply_primitive("exp", (a,))


def log(a: Tensor) -> Tensor:
    return apply_primitive("log", (a,))


def sqrt(a: Tensor) -> Tensor:
    return apply_primitive("sqrt", (a,))


def sigmoid(a: Tensor) -> Tensor:
    return apply_primitive("sigmoid", (a,))


def tanh(a: Tensor) -> Tensor:
    return apply_primitive("tanh", (a,))


def silu(a: Tensor) -> Tensor:
    return apply_primitive("silu", (a,))


def relu(a: Tensor) -> Tensor:
    return apply_primitive("relu", (a,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    return apply_primitive("softmax", (a,), axis=axis)


def layer_norm(a: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    return apply_primitive("layer_norm", (a,), eps=eps)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    # the shift is a constant, so the gradient is exactly softmax
    shift = constant(a.value.max(axis=axis, keepdims=True))
    return log(sum_(exp(a - shift), axis=axis, keepdims=True)) + shift


# -----------------------------------------------------------------------------
# backward pass
# -----------------------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Back-propagate from a scalar ``root``.

    Returns a mapping from every reachable leaf with ``requires_grad`` to its
    gradient; each node's ``grad`` attribute is also set.  Gradients from
    multiple uses of a node are summed.
    """
    if root.size != 1:
        raise ShapeError(f"backward: root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    order = _topological(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        if not node.parents:
            leaves[node] = g
            continue
        _, bwd = PRIMITIVES[node.op]
        parent_grads = bwd(g, node.value, *(p.value for p in node.parents), **node.attrs)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves


# -----------------------------------------------------------------------------
# finite-difference checking
# -----------------------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-4,
               coords: Sequence[int] | None = None) -> float:
    """Largest relative disagreement between backprop and central differences.

    ``f`` maps a tensor to a scalar tensor.  The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.  ``coords`` restricts the
    check to a subset of flat indices.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = np.array(x.value if isinstance(x, Tensor) else x, dtype=np.float64)
    with precision("f64"):
        leaf = tensor(base.copy())
        out = f(leaf)
        grads = backward(out)
        analytic = grads.get(leaf, np.zeros_like(base)).reshape(-1)
        flat = base.reshape(-1)
        idx = range(flat.size) if coords is None else coords
        worst = 0.0
        for i in idx:
            plus = flat.copy()
            plus[i] += h
            minus = flat.copy()
            minus[i] -= h
            fp = f(constant(plus.reshape(base.shape))).item()
            fm = f(constant(minus.reshape(base.shape))).item()
            numeric = (fp - fm) / (2 * h)
            if not np.isfinite(numeric):
                raise NonFiniteError(f"grad_check: non-finite difference at coordinate {i}")
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            worst = max(worst, err)
    return worst


def grad_check_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4,
                      rng: Rng | None = None, per_param: int | None = None) -> float:
    """Like :func:`grad_check` but perturbs parameter leaves in place.

    ``per_param`` limits how many randomly chosen coordinates of each
    parameter are checked (``rng`` picks them).
    """
    out = loss_fn()
    grads = backward(out)
    worst = 0.0
    for p in params:
        analytic = grads.get(p, np.zeros_like(p.value)).reshape(-1)
        flat = p.value.reshape(-1)
        if per_param is not None and flat.size > per_param:
            if rng is None:
                raise ValueError("rng is required when per_param is set")
            idx = rng.generator.choice(flat.size, size=per_param, replace=False)
        else:
            idx = range(flat.size)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            if not np.isfinite(numeric):
                raise NonFiniteError(f"grad_check_params: non-finite difference in {p.name}[{i}]")
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            worst = max(worst, err)
    return worst
