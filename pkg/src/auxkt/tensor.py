"""Reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built per forward pass (define-by-run). While a ``Graph`` is
active on the current thread, every op result that depends on a
gradient-requiring tensor is appended to the graph's tape;
``Graph.backward`` replays the tape in reverse insertion order, visiting
each node exactly once. With no active graph, ops compute values only,
which is the inference fast path.

Scope is deliberately small: 0-d scalars, 1-d vectors and 2-d matrices,
float64 throughout, and broadcasting limited to scalar-vs-anything.
A graph and its tensors are confined to one thread; independent graphs
may run on different threads concurrently.
"""

from __future__ import annotations

import json
import math
import threading

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


_STATE = threading.local()


def _active_graph():
    return getattr(_STATE, "graph", None)


class Graph:
    """Append-only tape of op nodes with recorded backward rules."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if _active_graph() is not None:
            raise RuntimeError("a Graph is already active on this thread")
        _STATE.graph = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.graph = None
        return False

    def backward(self, loss):
        """Seed d(loss)/d(loss) = 1 and propagate through the tape in reverse."""
        if loss.values.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.values.shape}")
        if not loss.requires_grad:
            return
        loss._accumulate(np.float64(1.0))
        for node in reversed(self.nodes):
            if node.grad is not None:
                node._rule(node.grad)


class Tensor:
    """Array value plus, when gradients are tracked, a same-shape gradient."""

    __slots__ = ("values", "grad", "requires_grad", "node_id", "_rule")

    def __init__(self, values, requires_grad=False):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim > 2:
            raise ShapeError(f"only 0-d/1-d/2-d tensors are supported, got shape {v.shape}")
        self.values = v
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(v) if requires_grad else None
        self.node_id = None
        self._rule = None

    @property
    def shape(self):
        return self.values.shape

    def item(self):
        return float(self.values)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self):
        return Tensor(self.values.copy())

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _acc(t, g):
    if t.requires_grad:
        t._accumulate(g)


def _record(out, parents, rule):
    g = _active_graph()
    if g is None or not any(p.requires_grad for p in parents):
        return out
    out.requires_grad = True
    out.grad = np.zeros_like(out.values)
    out._rule = rule
    out.node_id = len(g.nodes)
    g.nodes.append(out)
    return out


def _fit(g, target_values):
    """Reduce an output-shaped gradient onto a scalar operand if needed."""
    if target_values.ndim == 0 and np.ndim(g) > 0:
        return g.sum()
    return g


def _check_binary(av, bv, name):
    if av.shape == bv.shape or av.ndim == 0 or bv.ndim == 0:
        return
    raise ShapeError(f"{name}: shapes {av.shape} and {bv.shape} are neither equal nor scalar")


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: shapes {av.shape} x {bv.shape} are incompatible")
    out = Tensor(av @ bv)

    def rule(g):
        _acc(a, g @ bv.T)
        _acc(b, av.T @ g)

    return _record(out, (a, b), rule)


def add(a, b):
    a, b = _lift(a), _lift(b)
    av, bv = a.values, b.values
    _check_binary(av, bv, "add")
    out = Tensor(av + bv)

    def rule(g):
        _acc(a, _fit(g, av))
        _acc(b, _fit(g, bv))

    return _record(out, (a, b), rule)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    av, bv = a.values, b.values
    _check_binary(av, bv, "mul")
    out = Tensor(av * bv)

    def rule(g):
        _acc(a, _fit(g * bv, av))
        _acc(b, _fit(g * av, bv))

    return _record(out, (a, b), rule)


def div(a, b):
    a, b = _lift(a), _lift(b)
    av, bv = a.values, b.values
    _check_binary(av, bv, "div")
    out = Tensor(av / bv)

    def rule(g):
        _acc(a, _fit(g / bv, av))
        _acc(b, _fit(-g * av / (bv * bv), bv))

    return _record(out, (a, b), rule)


def scale(a, s):
    """Multiply by a plain float constant."""
    a = _lift(a)
    s = float(s)
    out = Tensor(a.values * s)

    def rule(g):
        _acc(a, g * s)

    return _record(out, (a,), rule)


def _expit(x):
    # evaluates exp only on the non-overflowing side
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a):
    a = _lift(a)
    out = Tensor(_expit(a.values))
    ov = out.values

    def rule(g):
        _acc(a, g * ov * (1.0 - ov))

    return _record(out, (a,), rule)


def tanh(a):
    a = _lift(a)
    out = Tensor(np.tanh(a.values))
    ov = out.values

    def rule(g):
        _acc(a, g * (1.0 - ov * ov))

    return _record(out, (a,), rule)


def exp(a):
    a = _lift(a)
    out = Tensor(np.exp(a.values))
    ov = out.values

    def rule(g):
        _acc(a, g * ov)

    return _record(out, (a,), rule)


def log(a):
    a = _lift(a)
    out = Tensor(np.log(a.values))

    def rule(g):
        _acc(a, g / a.values)

    return _record(out, (a,), rule)


def softplus(a):
    """log(1 + exp(x)), computed without overflow."""
    a = _lift(a)
    out = Tensor(np.logaddexp(0.0, a.values))

    def rule(g):
        _acc(a, g * _expit(a.values))

    return _record(out, (a,), rule)


def clip(a, lo, hi):
    """Clamp values to [lo, hi]; gradient passes only strictly inside the interval."""
    a = _lift(a)
    av = a.values
    out = Tensor(np.clip(av, lo, hi))
    inside = (av > lo) & (av < hi)

    def rule(g):
        _acc(a, g * inside)

    return _record(out, (a,), rule)


def minimum(a, b):
    a, b = _lift(a), _lift(b)
    av, bv = a.values, b.values
    if av.shape != bv.shape:
        raise ShapeError(f"minimum: shapes {av.shape} and {bv.shape} differ")
    take_a = av <= bv
    out = Tensor(np.where(take_a, av, bv))

    def rule(g):
        _acc(a, g * take_a)
        _acc(b, g * ~take_a)

    return _record(out, (a, b), rule)


def concat(parts, axis=0):
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ShapeError("concat of zero tensors")
    vals = [p.values for p in parts]
    ndim = vals[0].ndim
    if any(v.ndim != ndim for v in vals):
        raise ShapeError(f"concat: mixed ranks {[v.shape for v in vals]}")
    out = Tensor(np.concatenate(vals, axis=axis))
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _acc(p, g[lo:hi] if axis == 0 else g[:, lo:hi])

    return _record(out, tuple(parts), rule)


def reduce_sum(a, axis=None):
    a = _lift(a)
    av = a.values
    out = Tensor(av.sum(axis=axis))

    def rule(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, av.shape))
        else:
            _acc(a, np.broadcast_to(np.expand_dims(g, axis), av.shape))

    return _record(out, (a,), rule)


def reduce_mean(a, axis=None):
    a = _lift(a)
    n = a.values.size if axis is None else a.values.shape[axis]
    return scale(reduce_sum(a, axis), 1.0 / n)


def log_softmax(a, axis=-1):
    a = _lift(a)
    av = a.values
    m = av.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(av - m).sum(axis=axis, keepdims=True))
    out = Tensor(av - lse)
    probs = np.exp(out.values)

    def rule(g):
        _acc(a, g - probs * g.sum(axis=axis, keepdims=True))

    return _record(out, (a,), rule)


def broadcast_rows(row, n_rows):
    """Tile a (1, n) tensor to (n_rows, n); gradient sums back over rows."""
    row = _lift(row)
    if row.values.ndim != 2 or row.values.shape[0] != 1:
        raise ShapeError(f"broadcast_rows wants a (1, n) tensor, got {row.values.shape}")
    return matmul(Tensor(np.ones((n_rows, 1))), row)


# ---------------------------------------------------------------------------
# sparse binary quantization with a straight-through backward


def sparse_binary_codes(values, c_max):
    """0/1 codes: 1 where the entry is > 0 AND among its row's top-c_max.

    Ties in the top-k selection break toward the lowest index. Accepts a
    single vector or a matrix of row vectors.
    """
    v = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if not 1 <= c_max <= v.shape[1]:
        raise ShapeError(f"c_max={c_max} out of range for width {v.shape[1]}")
    order = np.argsort(-v, axis=1, kind="stable")
    mask = np.zeros_like(v)
    rows = np.arange(v.shape[0])[:, None]
    mask[rows, order[:, :c_max]] = 1.0
    codes = mask * (v > 0)
    return codes.reshape(np.shape(values))


def ste_quantize(e, c_max, alpha, beta):
    """Map activations to a two-level code: alpha where selected, beta elsewhere.

    Selection keeps at most ``c_max`` strictly positive entries per row.
    Backward is a straight-through estimator: the upstream gradient passes
    to ``e`` unchanged (identity, no clipping); ``alpha`` and ``beta``
    receive gradients from their multiplicative roles.
    """
    e, alpha, beta = _lift(e), _lift(alpha), _lift(beta)
    if alpha.values.ndim != 0 or beta.values.ndim != 0:
        raise ShapeError("alpha and beta must be scalar tensors")
    q = sparse_binary_codes(e.values, c_max)
    out = Tensor(float(alpha.values) * q + float(beta.values) * (1.0 - q))

    def rule(g):
        _acc(e, g)
        _acc(alpha, np.float64((g * q).sum()))
        _acc(beta, np.float64((g * (1.0 - q)).sum()))

    return _record(out, (e, alpha, beta), rule)


# ---------------------------------------------------------------------------
# LSTM cell


class LstmWeights:
    """Per-gate input/recurrent matrices and biases for one LSTM cell."""

    GATES = ("i", "f", "g", "o")

    def __init__(self, d_in, d_hidden, rng, forget_bias=1.0):
        self.d_in = d_in
        self.d_hidden = d_hidden
        bound = 1.0 / math.sqrt(d_hidden)
        for gate in self.GATES:
            setattr(self, f"w_x{gate}",
                    Tensor(rng.uniform(-bound, bound, size=(d_in, d_hidden)), requires_grad=True))
            setattr(self, f"w_h{gate}",
                    Tensor(rng.uniform(-bound, bound, size=(d_hidden, d_hidden)), requires_grad=True))
            bias = np.full((1, d_hidden), forget_bias if gate == "f" else 0.0)
            setattr(self, f"b_{gate}", Tensor(bias, requires_grad=True))

    def params(self):
        out = []
        for gate in self.GATES:
            out += [getattr(self, f"w_x{gate}"), getattr(self, f"w_h{gate}"), getattr(self, f"b_{gate}")]
        return out

    def named_arrays(self, prefix=""):
        return {f"{prefix}{name}": getattr(self, name).values
                for gate in self.GATES
                for name in (f"w_x{gate}", f"w_h{gate}", f"b_{gate}")}

    def load_arrays(self, arrays, prefix=""):
        for gate in self.GATES:
            for name in (f"w_x{gate}", f"w_h{gate}", f"b_{gate}"):
                getattr(self, name).values[...] = arrays[f"{prefix}{name}"]


def lstm_step(x, h_prev, c_prev, w):
    """One standard LSTM step over a (batch, features) row layout."""
    if x.values.ndim != 2 or h_prev.values.ndim != 2:
        raise ShapeError("lstm_step expects 2-d (batch, features) tensors")
    n = x.values.shape[0]

    def gate(wx, wh, b, squash):
        pre = add(add(matmul(x, wx), matmul(h_prev, wh)), broadcast_rows(b, n))
        return squash(pre)

    i = gate(w.w_xi, w.w_hi, w.b_i, sigmoid)
    f = gate(w.w_xf, w.w_hf, w.b_f, sigmoid)
    g = gate(w.w_xg, w.w_hg, w.b_g, tanh)
    o = gate(w.w_xo, w.w_ho, w.b_o, sigmoid)
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


# ---------------------------------------------------------------------------
# optimizers


class Sgd:
    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = lr

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p in self.params:
            p.values -= self.lr * p.grad


class Adam:
    """Standard Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None))
    if total > max_norm and total > 0.0:
        factor = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return total


# ---------------------------------------------------------------------------
# checkpoint container

_CHECKPOINT_VERSION = 1
_META_KEY = "__checkpoint__"


def save_checkpoint(path, arrays, meta=None):
    """Write named float arrays plus a JSON metadata record to an .npz file.

    Round-trips are bit-exact: values are stored in their native binary
    representation.
    """
    for key in arrays:
        if key.startswith("__"):
            raise ValueError(f"array name {key!r} is reserved")
    header = json.dumps({"version": _CHECKPOINT_VERSION, "meta": meta or {}}, sort_keys=True)
    payload = dict(arrays)
    payload[_META_KEY] = np.array(header)
    np.savez(path, **payload)


def load_checkpoint(path):
    """Read back (arrays, meta) written by :func:`save_checkpoint`."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z[_META_KEY][()]))
        if header["version"] != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        arrays = {k: z[k] for k in z.files if k != _META_KEY}
    return arrays, header["meta"]
