"""Parameter containers and the layers shared by set and sequence encoders."""
import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Base class; parameters are discovered from attributes in assignment order."""

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"parameter {k!r}: expected shape {p.shape}, got {arr.shape}")
            p.data[...] = arr

    def n_parameters(self):
        return sum(p.size for p in self.parameters())


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def param(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = param(glorot(rng, d_in, d_out))
        self.bias = param(np.zeros(d_out)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x):
        if x.shape[-1] != self.d_in:
            raise T.DimensionError(f"Linear expects input width {self.d_in}, got shape {x.shape}")
        y = T.matmul(x, self.weight)
        return y if self.bias is None else T.add(y, self.bias)


class LayerNorm(Module):
    def __init__(self, d):
        self.gain = param(np.ones(d))
        self.bias = param(np.zeros(d))

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias)


class MLP(Module):
    """Stack of Linear layers with ReLU between them (none after the last)."""

    def __init__(self, widths, rng):
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            if i:
                x = T.relu(x)
            x = layer(x)
        return x


class MultiHeadAttention(Module):
    # keys carry no bias: a key bias shifts every score in a row equally and
    # never receives gradient through the softmax
    def __init__(self, d, n_heads, rng):
        if d % n_heads:
            raise ValueError(f"width {d} is not divisible by {n_heads} attention heads")
        self.n_heads = n_heads
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng, bias=False)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)

    def __call__(self, x, y, mask=None):
        o = T.attention(self.wq(x), self.wk(y), self.wv(y), self.n_heads, mask)
        return self.wo(o)


class AttentionBlock(Module):
    """Post-norm block ``LN(H + rFF(H))`` with ``H = LN(X + MHA(X, Y, Y))``.

    Serves as the Set Transformer MAB and as a Transformer encoder layer
    (with ``Y = X``).
    """

    def __init__(self, d, n_heads, ff_dim, rng):
        self.mha = MultiHeadAttention(d, n_heads, rng)
        self.ln1 = LayerNorm(d)
        self.ff = MLP([d, ff_dim, d], rng)
        self.ln2 = LayerNorm(d)

    def __call__(self, x, y, mask=None):
        h = self.ln1(T.add(x, self.mha(x, y, mask)))
        return self.ln2(T.add(h, self.ff(h)))
