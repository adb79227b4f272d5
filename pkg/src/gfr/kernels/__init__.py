"""Hot row kernels with a compiled backend and a numpy fallback.

The compiled extension (``gfr.kernels.fast``) is used when it imports; set
``GFR_KERNELS=python`` to force the fallback.  ``use_backend`` switches at
runtime, which the tests and the benchmark rely on.
"""

import os
from contextlib import contextmanager

import numpy as np

from . import reference

try:
    from . import fast
except ImportError:  # extension not built
    fast = None

_impl = reference
BACKEND = "python"


def available_backends():
    return ["cython", "python"] if fast is not None else ["python"]


def use_backend(name):
    global _impl, BACKEND
    if name == "cython":
        if fast is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        _impl = fast
    elif name == "python":
        _impl = reference
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    BACKEND = name


@contextmanager
def backend(name):
    prev = BACKEND
    use_backend(name)
    try:
        yield
    finally:
        use_backend(prev)


if os.environ.get("GFR_KERNELS", "auto") != "python" and fast is not None:
    use_backend("cython")


def _c(a):
    return np.ascontiguousarray(a)


def softmax_rows(x, causal=False):
    return _impl.softmax_rows(_c(x), bool(causal))


def softmax_rows_backward(p, dp):
    return _impl.softmax_rows_backward(_c(p), _c(dp))


def layernorm_forward(x, gamma, beta, eps):
    return _impl.layernorm_forward(_c(x), _c(gamma), _c(beta), float(eps))


def layernorm_backward(dy, xhat, rstd, gamma):
    return _impl.layernorm_backward(_c(dy), _c(xhat), _c(rstd), _c(gamma))


def cross_entropy_rows(logits, targets, weights):
    logits = _c(logits)
    return _impl.cross_entropy_rows(
        logits, _c(targets).astype(np.int64, copy=False), _c(weights).astype(logits.dtype, copy=False)
    )


def gelu_forward(x):
    flat = _c(x).reshape(-1)
    return _impl.gelu_forward(flat).reshape(x.shape)


def gelu_backward(x, dy):
    return _impl.gelu_backward(_c(x).reshape(-1), _c(dy).reshape(-1)).reshape(x.shape)


def scatter_add_rows(out, idx, src):
    return _impl.scatter_add_rows(out, _c(idx).astype(np.int64, copy=False), _c(src))
