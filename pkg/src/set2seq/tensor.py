"""Dense fp64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Graph` (entered with a
``with`` block) whenever an operand requires a gradient.  Outside a graph,
operations just compute values, which is what inference uses.

Broadcasting is deliberately limited to adding a bias vector along the last
dimension.
"""
import threading

import numpy as np

from . import _kernels as K

LN_EPS = 1e-5


class DimensionError(ValueError):
    pass


class Tensor:
    """Row-major fp64 array with optional gradient participation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if any(d < 1 for d in arr.shape):
            raise DimensionError(f"tensor dimensions must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self, graph=None):
        backward(self, graph)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_state = threading.local()


def _active_graph():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Graph:
    """Append-only tape of recorded operations.

    Use as a context manager; build a fresh one per forward pass.  The tape is
    confined to the thread that entered it.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def record(self, out, inputs, backward_fn):
        node = _Node(out, inputs, backward_fn)
        out._node = node
        self.nodes.append(node)

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

        Repeated calls accumulate; callers reset with ``zero_grad``.
        """
        if loss.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for t, gt in zip(node.inputs, in_grads):
                if gt is None or not t.requires_grad:
                    continue
                if t._node is None:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += gt
                else:
                    prev = grads.get(id(t))
                    grads[id(t)] = gt if prev is None else prev + gt
        if loss._node is None and loss.requires_grad:
            if loss.grad is None:
                loss.grad = np.zeros_like(loss.data)
            loss.grad += 1.0


def backward(loss, graph=None):
    graph = graph or _active_graph()
    if graph is None:
        raise RuntimeError("backward() called with no graph; run the forward pass inside `with Graph():`")
    graph.backward(loss)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, backward_fn):
    out = Tensor(data)
    graph = _active_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        graph.record(out, inputs, backward_fn)
    return out


# --------------------------------------------------------------------------
# elementwise / linear algebra
# --------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.shape[-1] == b.shape[0]:
        axes = tuple(range(a.ndim - 1))
        return _make(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)))
    raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, c):
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a):
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _make(a.data.T, (a,), lambda g: (g.T,))


def relu(a):
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def reshape(a, shape):
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def sum_all(a):
    return _make(np.sum(a.data), (a,), lambda g: (np.full_like(a.data, g),))


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def gather_rows(table, index):
    """Rows of ``table`` at ``index``; index -1 yields a zero row."""
    index = np.asarray(index, dtype=np.int64)
    valid = index >= 0
    out = np.zeros((len(index), table.shape[1]))
    out[valid] = table.data[index[valid]]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index[valid], g[valid])
        return (gt,)

    return _make(out, (table,), bw)


# --------------------------------------------------------------------------
# normalisation / pooling
# --------------------------------------------------------------------------

def softmax_lastdim(x):
    """Softmax over the last axis with max-subtraction.

    NaN inputs propagate NaN through their slice.
    """
    shp = x.shape
    y = K.softmax_rows(x.data.reshape(-1, shp[-1])).reshape(shp)

    def bw(g):
        return (K.softmax_rows_backward(y.reshape(-1, shp[-1]), g.reshape(-1, shp[-1])).reshape(shp),)

    return _make(y, (x,), bw)


def layer_norm(x, gain, bias, eps=LN_EPS):
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match last dim {d}")
    shp = x.shape
    y, xhat, rstd = K.layer_norm(x.data.reshape(-1, d), gain.data, bias.data, eps)

    def bw(g):
        gx, gg, gb = K.layer_norm_backward(g.reshape(-1, d), xhat, rstd, gain.data)
        return gx.reshape(shp), gg, gb

    return _make(y.reshape(shp), (x, gain, bias), bw)


POOL_MODES = ("mean", "max", "sum")


def reduce_pool(x, axis, mode):
    """Reduce ``axis`` by mean, max or sum.  Max ties route to the lowest index."""
    if mode not in POOL_MODES:
        raise ValueError(f"unknown pooling mode {mode!r}; expected one of {POOL_MODES}")
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"reduce_pool: axis {axis} out of range for shape {x.shape}")
    axis = axis % x.ndim
    n = x.shape[axis]
    if x.ndim == 1:
        # keep results as 1-element vectors rather than 0-d arrays
        return reshape(reduce_pool(reshape(x, (n, 1)), 0, mode), (1,))
    if mode == "sum":
        return _make(x.data.sum(axis=axis), (x,),
                     lambda g: (np.repeat(np.expand_dims(g, axis), n, axis=axis),))
    if mode == "mean":
        return _make(x.data.mean(axis=axis), (x,),
                     lambda g: (np.repeat(np.expand_dims(g, axis), n, axis=axis) / n,))
    arg = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, (x,), bw)


def segment_pool(x, segments, n_segments, mode):
    """Pool the rows of ``x`` [M x d] into ``n_segments`` groups.

    ``segments[i]`` is the group of row ``i``; every group must be non-empty.
    """
    if mode not in POOL_MODES:
        raise ValueError(f"unknown pooling mode {mode!r}; expected one of {POOL_MODES}")
    seg = np.asarray(segments, dtype=np.int64)
    counts = np.bincount(seg, minlength=n_segments).astype(np.float64)
    if np.any(counts == 0):
        raise DimensionError("segment_pool: every segment needs at least one row")
    if mode == "max":
        out, arg = K.segment_max(x.data, seg, n_segments)
        cols = np.broadcast_to(np.arange(x.shape[1]), arg.shape)

        def bw(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, (arg, cols), g)
            return (gx,)

        return _make(out, (x,), bw)
    out = K.segment_sum(x.data, seg, n_segments)
    if mode == "mean":
        out = out / counts[:, None]
        return _make(out, (x,), lambda g: ((g / counts[:, None])[seg],))
    return _make(out, (x,), lambda g: (g[seg],))


# --------------------------------------------------------------------------
# attention
# --------------------------------------------------------------------------

def block_mask(query_segments, key_segments):
    """Additive mask letting each query attend only to keys of its own segment."""
    q = np.asarray(query_segments)[:, None]
    k = np.asarray(key_segments)[None, :]
    return np.where(q == k, 0.0, -np.inf)


def attention(q, k, v, n_heads, mask=None):
    """Scaled dot-product attention over ``n_heads`` column groups.

    q: [n x d], k and v: [m x d], mask: optional additive [n x m] constant.
    Returns the concatenated head outputs [n x d].
    """
    n, d = q.shape
    m = k.shape[0]
    if k.shape != (m, d) or v.shape != (m, d):
        raise DimensionError(f"attention: query {q.shape}, key {k.shape}, value {v.shape} disagree")
    if d % n_heads:
        raise ValueError(f"model width {d} is not divisible by {n_heads} heads")
    dh = d // n_heads
    c = 1.0 / np.sqrt(dh)
    Q = q.data.reshape(n, n_heads, dh).transpose(1, 0, 2)
    Kh = k.data.reshape(m, n_heads, dh).transpose(1, 0, 2)
    V = v.data.reshape(m, n_heads, dh).transpose(1, 0, 2)
    S = (Q @ Kh.transpose(0, 2, 1)) * c
    if mask is not None:
        S = S + mask[None]
    A = K.softmax_rows(np.ascontiguousarray(S.reshape(-1, m))).reshape(n_heads, n, m)
    O = (A @ V).transpose(1, 0, 2).reshape(n, d)

    def bw(g):
        G = g.reshape(n, n_heads, dh).transpose(1, 0, 2)
        gA = G @ V.transpose(0, 2, 1)
        gV = A.transpose(0, 2, 1) @ G
        gS = K.softmax_rows_backward(A.reshape(-1, m), np.ascontiguousarray(gA.reshape(-1, m)))
        gS = gS.reshape(n_heads, n, m) * c
        gQ = gS @ Kh
        gK = gS.transpose(0, 2, 1) @ Q
        back = lambda t, rows: t.transpose(1, 0, 2).reshape(rows, d)
        return back(gQ, n), back(gK, m), back(gV, m)

    return _make(O, (q, k, v), bw)
