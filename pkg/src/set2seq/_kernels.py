"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` version and a plain numpy
version with identical semantics.  The numba path is used when numba imports
and ``SET2SEQ_DISABLE_NUMBA`` is unset (or ``0``); set it to ``1`` to force the
numpy fallback.  Both tables are importable so tests and the benchmark can
compare them directly.
"""
import os

import numpy as np

try:
    import numba as nb

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False


def _env_disabled():
    return os.environ.get("SET2SEQ_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


# --------------------------------------------------------------------------
# numpy reference path
# --------------------------------------------------------------------------

def softmax_rows_np(x):
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=1, keepdims=True)


def softmax_rows_backward_np(y, gy):
    return y * (gy - np.sum(y * gy, axis=1, keepdims=True))


def layer_norm_np(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def layer_norm_backward_np(gy, xhat, rstd, gain):
    d = xhat.shape[1]
    ggain = np.sum(gy * xhat, axis=0)
    gbias = np.sum(gy, axis=0)
    gxhat = gy * gain
    gx = (rstd[:, None] / d) * (
        d * gxhat
        - gxhat.sum(axis=1, keepdims=True)
        - xhat * np.sum(gxhat * xhat, axis=1, keepdims=True)
    )
    return gx, ggain, gbias


def segment_sum_np(x, seg, n_seg):
    out = np.zeros((n_seg, x.shape[1]))
    np.add.at(out, seg, x)
    return out


def segment_max_np(x, seg, n_seg):
    n, d = x.shape
    out = np.full((n_seg, d), -np.inf)
    arg = np.full((n_seg, d), -1, dtype=np.int64)
    # rows scanned in index order; strict '>' keeps the lowest index on ties
    for i in range(n):
        s = seg[i]
        better = x[i] > out[s]
        out[s] = np.where(better, x[i], out[s])
        arg[s] = np.where(better, i, arg[s])
    return out, arg


def kendall_counts_np(target, pred):
    """Return (pairs, target_ties, discordant, pred_only_ties, target_only_ties).

    ``discordant`` counts strictly opposite-ordered pairs; the last two count
    pairs tied in exactly one of the lists.
    """
    dt = np.sign(target[:, None] - target[None, :])
    dp = np.sign(pred[:, None] - pred[None, :])
    iu = np.triu_indices(len(target), 1)
    dt = dt[iu]
    dp = dp[iu]
    pairs = dt.size
    target_ties = int(np.sum(dt == 0))
    discordant = int(np.sum(dt * dp < 0))
    pred_only = int(np.sum((dp == 0) & (dt != 0)))
    target_only = int(np.sum((dt == 0) & (dp != 0)))
    return pairs, target_ties, discordant, pred_only, target_only


def cosine_distance_matrix_np(a, b):
    na = np.sqrt(np.sum(a * a, axis=1))
    nb_ = np.sqrt(np.sum(b * b, axis=1))
    return 1.0 - (a @ b.T) / np.outer(na, nb_)


NUMPY_KERNELS = {
    "softmax_rows": softmax_rows_np,
    "softmax_rows_backward": softmax_rows_backward_np,
    "layer_norm": layer_norm_np,
    "layer_norm_backward": layer_norm_backward_np,
    "segment_sum": segment_sum_np,
    "segment_max": segment_max_np,
    "kendall_counts": kendall_counts_np,
    "cosine_distance_matrix": cosine_distance_matrix_np,
}


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @nb.njit(cache=True)
    def softmax_rows_nb(x):
        n, d = x.shape
        out = np.empty_like(x)
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(d):
                e = np.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(d):
                out[i, j] /= s
        return out

    @nb.njit(cache=True)
    def softmax_rows_backward_nb(y, gy):
        n, d = y.shape
        gx = np.empty_like(y)
        for i in range(n):
            dot = 0.0
            for j in range(d):
                dot += y[i, j] * gy[i, j]
            for j in range(d):
                gx[i, j] = y[i, j] * (gy[i, j] - dot)
        return gx

    @nb.njit(cache=True)
    def layer_norm_nb(x, gain, bias, eps):
        n, d = x.shape
        out = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(n)
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mu
                var += c * c
            var /= d
            r = 1.0 / np.sqrt(var + eps)
            rstd[i] = r
            for j in range(d):
                h = (x[i, j] - mu) * r
                xhat[i, j] = h
                out[i, j] = h * gain[j] + bias[j]
        return out, xhat, rstd

    @nb.njit(cache=True)
    def layer_norm_backward_nb(gy, xhat, rstd, gain):
        n, d = gy.shape
        gx = np.empty_like(gy)
        ggain = np.zeros(d)
        gbias = np.zeros(d)
        for i in range(n):
            s1 = 0.0
            s2 = 0.0
            for j in range(d):
                g = gy[i, j] * gain[j]
                s1 += g
                s2 += g * xhat[i, j]
                ggain[j] += gy[i, j] * xhat[i, j]
                gbias[j] += gy[i, j]
            for j in range(d):
                g = gy[i, j] * gain[j]
                gx[i, j] = (rstd[i] / d) * (d * g - s1 - xhat[i, j] * s2)
        return gx, ggain, gbias

    @nb.njit(cache=True)
    def segment_sum_nb(x, seg, n_seg):
        n, d = x.shape
        out = np.zeros((n_seg, d))
        for i in range(n):
            s = seg[i]
            for j in range(d):
                out[s, j] += x[i, j]
        return out

    @nb.njit(cache=True)
    def segment_max_nb(x, seg, n_seg):
        n, d = x.shape
        out = np.full((n_seg, d), -np.inf)
        arg = np.full((n_seg, d), -1, dtype=np.int64)
        for i in range(n):
            s = seg[i]
            for j in range(d):
                if x[i, j] > out[s, j]:
                    out[s, j] = x[i, j]
                    arg[s, j] = i
        return out, arg

    @nb.njit(cache=True)
    def kendall_counts_nb(target, pred):
        k = target.shape[0]
        pairs = 0
        target_ties = 0
        discordant = 0
        pred_only = 0
        target_only = 0
        for i in range(k):
            for j in range(i + 1, k):
                pairs += 1
                dt = target[i] - target[j]
                dp = pred[i] - pred[j]
                tt = dt == 0.0
                tp = dp == 0.0
                if tt:
                    target_ties += 1
                if tt and not tp:
                    target_only += 1
                elif tp and not tt:
                    pred_only += 1
                elif dt * dp < 0.0:
                    discordant += 1
        return pairs, target_ties, discordant, pred_only, target_only

    @nb.njit(cache=True)
    def cosine_distance_matrix_nb(a, b):
        n, d = a.shape
        m = b.shape[0]
        na = np.empty(n)
        nbn = np.empty(m)
        for i in range(n):
            s = 0.0
            for t in range(d):
                s += a[i, t] * a[i, t]
            na[i] = np.sqrt(s)
        for j in range(m):
            s = 0.0
            for t in range(d):
                s += b[j, t] * b[j, t]
            nbn[j] = np.sqrt(s)
        out = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                s = 0.0
                for t in range(d):
                    s += a[i, t] * b[j, t]
                out[i, j] = 1.0 - s / (na[i] * nbn[j])
        return out

    NUMBA_KERNELS = {
        "softmax_rows": softmax_rows_nb,
        "softmax_rows_backward": softmax_rows_backward_nb,
        "layer_norm": layer_norm_nb,
        "layer_norm_backward": layer_norm_backward_nb,
        "segment_sum": segment_sum_nb,
        "segment_max": segment_max_nb,
        "kendall_counts": kendall_counts_nb,
        "cosine_distance_matrix": cosine_distance_matrix_nb,
    }
else:  # pragma: no cover
    NUMBA_KERNELS = None


USE_NUMBA = HAS_NUMBA and not _env_disabled()
KERNELS = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS

softmax_rows = KERNELS["softmax_rows"]
softmax_rows_backward = KERNELS["softmax_rows_backward"]
layer_norm = KERNELS["layer_norm"]
layer_norm_backward = KERNELS["layer_norm_backward"]
segment_sum = KERNELS["segment_sum"]
segment_max = KERNELS["segment_max"]
kendall_counts = KERNELS["kendall_counts"]
cosine_distance_matrix = KERNELS["cosine_distance_matrix"]


def backend():
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"
