"""Minimal reverse-mode autodiff kernel over float64 numpy arrays.

Everything the trainable parts of the package need lives here: dense layers
with tanh hidden activations, permutation-invariant set max-pooling, squared
losses, and Adam. Gradients are exact (checked against central finite
differences in the test suite) and every operation is deterministic for a
fixed input: float64 throughout, numpy's fixed-order reductions, max ties
broken by lowest index.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

__all__ = [
    "Tensor",
    "constant",
    "leaf",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "tanh",
    "sigmoid",
    "exp",
    "clamp",
    "minimum",
    "concat",
    "reshape",
    "tsum",
    "tmean",
    "max_axis",
    "backprop",
    "Mlp",
    "mlp_init",
    "mlp_forward",
    "mlp_leaves",
    "mlp_apply",
    "maxpool_set",
    "AdamState",
    "adam_init",
    "adam_step",
    "glorot_uniform",
    "dump_params",
    "load_params",
]


class Tensor:
    """A node in the computation graph.

    ``data`` is always a C-contiguous float64 array, so the flat row-major
    ``values`` view matches the logical shape at all times.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        """Flat row-major view of the payload."""
        return self.data.reshape(-1)

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Only defined for scalar outputs; seeds with 1.0 and walks the graph
        in reverse topological order.
        """
        if self.data.size != 1:
            raise ContractViolation(
                f"backward() needs a scalar loss, got shape {self.data.shape}"
            )
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
            else:
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; wraps plain arrays/scalars as constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def constant(x):
    return _as_tensor(x)


def leaf(data, requires_grad=True):
    return Tensor(data, requires_grad=requires_grad)


def _accum(node, g):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        node.grad = node.grad + g


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ContractViolation(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}"
        )
    out_data = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return Tensor(out_data, parents=(a, b), backward=bwd)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def neg(a):
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, -g)

    return Tensor(-a.data, parents=(a,), backward=bwd)


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return Tensor(out_data, parents=(a,), backward=bwd)


def sigmoid(a):
    """Numerically stable logistic; output is strictly inside (0, 1) for finite input."""
    a = _as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = np.clip(out_data, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))

    def bwd(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(a,), backward=bwd)


def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out_data)

    return Tensor(out_data, parents=(a,), backward=bwd)


def clamp(a, lo, hi):
    a = _as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    pass_mask = (a.data > lo) & (a.data < hi)

    def bwd(g):
        _accum(a, g * pass_mask)

    return Tensor(out_data, parents=(a,), backward=bwd)


def minimum(a, b):
    """Elementwise min; on ties the gradient goes to the first operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data <= b.data
    out_data = np.where(take_a, a.data, b.data)

    def bwd(g):
        _accum(a, _unbroadcast(g * take_a, a.data.shape))
        _accum(b, _unbroadcast(g * ~take_a, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def concat(parts, axis=-1):
    parts = [_as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for p, chunk in zip(parts, np.split(g, splits, axis=axis)):
            _accum(p, chunk)

    return Tensor(out_data, parents=tuple(parts), backward=bwd)


def reshape(a, shape):
    a = _as_tensor(a)
    in_shape = a.data.shape

    def bwd(g):
        _accum(a, g.reshape(in_shape))

    return Tensor(a.data.reshape(shape), parents=(a,), backward=bwd)


def tsum(a, axis=None):
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis)
    in_shape = a.data.shape

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, in_shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), in_shape))

    return Tensor(out_data, parents=(a,), backward=bwd)


def tmean(a):
    a = _as_tensor(a)
    n = a.data.size

    def bwd(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape))

    return Tensor(a.data.mean(), parents=(a,), backward=bwd)


def max_axis(a, axis):
    """Max-reduce one axis; ties resolve to the lowest index (argmax order)."""
    a = _as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    in_shape = a.data.shape

    def bwd(g):
        full = np.zeros(in_shape, dtype=np.float64)
        np.put_along_axis(full, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis=axis)
        _accum(a, full)

    return Tensor(out_data, parents=(a,), backward=bwd)


def backprop(loss, params):
    """Gradient of a recorded scalar loss w.r.t. each leaf in ``params``.

    Leaves that the loss does not depend on get zero gradients.
    """
    loss = _as_tensor(loss)
    for p in params:
        p.grad = None
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


# ---------------------------------------------------------------------------
# Dense networks


def glorot_uniform(fan_out, fan_in, rng):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


@dataclass
class Mlp:
    """Stack of dense layers: tanh after every hidden layer, configurable final nonlinearity.

    Each layer is (weight out x in, bias out). Consecutive dimensions chain.
    """

    layers: list = field(default_factory=list)
    final: str = "identity"  # identity | sigmoid

    @property
    def in_dim(self):
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self):
        return self.layers[-1][0].shape[0]

    def param_arrays(self):
        out = []
        for w, b in self.layers:
            out.append(w)
            out.append(b)
        return out

    def set_param_arrays(self, arrays):
        it = iter(arrays)
        self.layers = [(next(it), next(it)) for _ in self.layers]

    def copy(self):
        return Mlp([(w.copy(), b.copy()) for w, b in self.layers], self.final)


def mlp_init(dims, final="identity", rng=None, zero_last=False):
    """Fresh MLP with glorot-uniform weights and zero biases.

    ``zero_last`` zeroes the output layer (useful for heads that should start
    at the identity of their nonlinearity).
    """
    if final not in ("identity", "sigmoid"):
        raise ContractViolation(f"unknown final nonlinearity {final!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    layers = []
    for i in range(len(dims) - 1):
        w = glorot_uniform(dims[i + 1], dims[i], rng)
        if zero_last and i == len(dims) - 2:
            w = np.zeros_like(w)
        layers.append((w, np.zeros(dims[i + 1])))
    return Mlp(layers, final)


def mlp_leaves(mlp, requires_grad=True):
    """Wrap the MLP's arrays as graph leaves for one forward/backward pass."""
    return [(leaf(w, requires_grad), leaf(b, requires_grad)) for w, b in mlp.layers]


def mlp_apply(leaves, final, x):
    """Run a (batch x in) Tensor through wrapped layers."""
    h = x
    for i, (w, b) in enumerate(leaves):
        h = add(matmul(h, _transpose_leaf(w)), b)
        if i < len(leaves) - 1:
            h = tanh(h)
    if final == "sigmoid":
        h = sigmoid(h)
    return h


def _transpose_leaf(w):
    in_shape = w.data.shape

    def bwd(g):
        _accum(w, g.T)

    return Tensor(w.data.T, parents=(w,), backward=bwd)


def mlp_forward(mlp, x):
    """Plain-array forward pass; validates the width contract."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mlp.in_dim:
        raise ContractViolation(
            f"mlp_forward: input width {x.shape} does not match in_dim {mlp.in_dim}"
        )
    return mlp_apply(mlp_leaves(mlp, requires_grad=False), mlp.final, constant(x)).data


def maxpool_set(features):
    """Column-wise max over a point set.

    Returns the pooled d-vector and, per feature, the index of the winning
    point (lowest index on ties). Permuting rows never changes the pooled
    vector.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ContractViolation("maxpool_set needs a nonempty (n_points x d) matrix")
    winners = np.argmax(feats, axis=0)
    pooled = feats[winners, np.arange(feats.shape[1])]
    return pooled, winners.tolist()


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Adaptive-moment accumulators; shapes mirror the parameter list."""

    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        step=0,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place.

    Raises before touching anything if any gradient is non-finite, so the
    parameters stay consistent on error.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractViolation("adam_step: params/grads/state length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ContractViolation(f"adam_step: shape mismatch {p.shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ContractViolation("adam_step: non-finite gradient")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def clip_grad_norm(grads, max_norm):
    """Scale gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for g in grads:
        total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


# ---------------------------------------------------------------------------
# Parameter serialization: text shape manifest + flat little-endian float64 stream.


def dump_params(named_arrays):
    """Serialize (name, array) pairs.

    Format: a text header ("diffcore-params v1", entry count, then one
    "name dim0 dim1 ..." line per array) terminated by a blank line, followed
    by the arrays' float64 little-endian bytes in manifest order.
    """
    buf = io.BytesIO()
    lines = ["diffcore-params v1", str(len(named_arrays))]
    for name, arr in named_arrays:
        if " " in name or "\n" in name:
            raise ContractViolation(f"parameter name {name!r} contains whitespace")
        dims = " ".join(str(d) for d in np.asarray(arr).shape)
        lines.append(f"{name} {dims}".rstrip())
    buf.write(("\n".join(lines) + "\n\n").encode("ascii"))
    for _, arr in named_arrays:
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def load_params(blob):
    """Inverse of dump_params; returns the (name, array) list."""
    sep = blob.index(b"\n\n")
    header = blob[:sep].decode("ascii").split("\n")
    if header[0] != "diffcore-params v1":
        raise ContractViolation(f"bad parameter stream header: {header[0]!r}")
    count = int(header[1])
    body = blob[sep + 2:]
    out = []
    offset = 0
    for line in header[2:2 + count]:
        parts = line.split(" ")
        name = parts[0]
        shape = tuple(int(d) for d in parts[1:])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=offset).reshape(shape)
        out.append((name, arr.astype(np.float64)))
        offset += n * 8
    return out
