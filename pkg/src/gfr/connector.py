"""Two-layer MLP mapping shuffled visual tokens into the decoder's embedding space."""

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .params import ParameterStore, scaled_uniform


def init_connector(seed: int, in_dim: int, out_dim: int, hidden: int | None = None) -> ParameterStore:
    """Seeded scaled-uniform weights, zero biases.  ``hidden`` defaults to ``out_dim``."""
    hidden = out_dim if hidden is None else hidden
    if min(in_dim, out_dim, hidden) <= 0:
        raise DimensionError("connector dims must be positive")
    rng = np.random.default_rng([seed, 2])
    store = ParameterStore()
    store.add("connector.w1", scaled_uniform(rng, in_dim, (in_dim, hidden)), "connector")
    store.add("connector.b1", np.zeros(hidden), "connector")
    store.add("connector.w2", scaled_uniform(rng, hidden, (hidden, out_dim)), "connector")
    store.add("connector.b2", np.zeros(out_dim), "connector")
    return store


def project(vis, params: ParameterStore) -> T.Tensor:
    """``GELU(vis @ W1 + b1) @ W2 + b2`` applied row-wise."""
    vis = T.as_tensor(vis)
    w1 = params["connector.w1"]
    if vis.shape[-1] != w1.shape[0]:
        raise DimensionError(f"connector expects width {w1.shape[0]}, got {vis.shape[-1]}")
    h = T.gelu(T.matmul(vis, w1) + params["connector.b1"])
    return T.matmul(h, params["connector.w2"]) + params["connector.b2"]
