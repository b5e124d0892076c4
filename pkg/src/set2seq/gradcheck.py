"""Central finite-difference gradient checks."""
import numpy as np

from .tensor import Graph


def numeric_grad(f, param, h=1e-5):
    """d f() / d param by central differences; ``f`` returns a float."""
    g = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| over max(max|a|, max|n|, floor), per tensor."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_gradients(loss_fn, named_params, h=1e-5):
    """Compare tape gradients of ``loss_fn()`` against finite differences.

    ``loss_fn`` builds a scalar Tensor from the current parameter values.
    Returns ``{name: relative_error}``.
    """
    named_params = list(named_params)
    for _, p in named_params:
        p.zero_grad()
    with Graph() as g:
        loss = loss_fn()
        g.backward(loss)
    analytic = {n: p.grad.copy() for n, p in named_params}
    f = lambda: loss_fn().item()
    return {n: relative_error(analytic[n], numeric_grad(f, p, h)) for n, p in named_params}
