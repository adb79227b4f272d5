"""Pure-numpy implementations of the row kernels.

Every function here has a twin in ``fast.pyx`` with identical semantics.
Row sums that feed a softmax normaliser are taken with ``np.cumsum`` so the
accumulation order is strictly sequential, matching the compiled kernels and
making causal rows independent of any columns past the diagonal.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def softmax_rows(x, causal):
    """Softmax over the last axis of a 2-D array.

    With ``causal`` set, ``x`` holds stacked square score matrices and row ``r``
    only sees columns ``j <= r % L``; masked entries come back as exact zeros.
    """
    rows, width = x.shape
    if causal:
        q = np.arange(rows) % width
        z = np.where(np.arange(width)[None, :] > q[:, None], -np.inf, x)
    else:
        q = np.full(rows, width - 1)
        z = x
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = np.cumsum(e, axis=1)[np.arange(rows), q]
    return e / s[:, None]


def softmax_rows_backward(p, dp):
    dot = np.cumsum(p * dp, axis=1)[:, -1]
    return p * (dp - dot[:, None])


def layernorm_forward(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layernorm_backward(dy, xhat, rstd, gamma):
    dxhat = dy * gamma
    a = dxhat.mean(axis=1, keepdims=True)
    b = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - a - xhat * b)
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def cross_entropy_rows(logits, targets, weights):
    """Weighted sum of per-row NLL and its gradient.

    Rows with zero weight are skipped entirely: they add nothing to the loss
    and get an all-zero gradient row.
    """
    grad = np.zeros_like(logits)
    rows = np.flatnonzero(weights)
    if rows.size == 0:
        return 0.0, grad
    z = logits[rows]
    t = targets[rows]
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = np.cumsum(e, axis=1)[:, -1:]
    lse = m + np.log(s)
    nll = lse[:, 0] - z[np.arange(rows.size), t]
    w = weights[rows]
    p = e / s
    p[np.arange(rows.size), t] -= 1.0
    grad[rows] = w[:, None] * p
    return float(np.cumsum(w * nll)[-1]), grad


def gelu_forward(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_backward(x, dy):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return dy * (cdf + x * pdf)


def scatter_add_rows(out, idx, src):
    """``out[idx[i]] += src[i]`` in index order; negative indices are dropped."""
    keep = idx >= 0
    np.add.at(out, idx[keep], src[keep])
    return out
