"""Pre-norm transformer block shared by the vision encoder and the decoder."""

import numpy as np

from . import tensor as T
from .params import ParameterStore, scaled_uniform

LN_EPS = 1e-5


def init_block(store: ParameterStore, prefix: str, dim: int, group: str, rng: np.random.Generator, mlp_ratio=4):
    hidden = mlp_ratio * dim
    store.add(f"{prefix}.ln1.g", np.ones(dim), group)
    store.add(f"{prefix}.ln1.b", np.zeros(dim), group)
    store.add(f"{prefix}.qkv.w", scaled_uniform(rng, dim, (dim, 3 * dim)), group)
    store.add(f"{prefix}.qkv.b", np.zeros(3 * dim), group)
    store.add(f"{prefix}.proj.w", scaled_uniform(rng, dim, (dim, dim)), group)
    store.add(f"{prefix}.proj.b", np.zeros(dim), group)
    store.add(f"{prefix}.ln2.g", np.ones(dim), group)
    store.add(f"{prefix}.ln2.b", np.zeros(dim), group)
    store.add(f"{prefix}.fc1.w", scaled_uniform(rng, dim, (dim, hidden)), group)
    store.add(f"{prefix}.fc1.b", np.zeros(hidden), group)
    store.add(f"{prefix}.fc2.w", scaled_uniform(rng, hidden, (hidden, dim)), group)
    store.add(f"{prefix}.fc2.b", np.zeros(dim), group)


def linear(x, p: ParameterStore, prefix: str):
    return T.matmul(x, p[f"{prefix}.w"]) + p[f"{prefix}.b"]


def self_attention(x, p: ParameterStore, prefix: str, heads: int, causal: bool):
    """Multi-head self-attention on ``x`` of shape ``[N, L, D]``."""
    n, length, dim = x.shape
    dh = dim // heads
    qkv = linear(x, p, f"{prefix}.qkv").reshape(n, length, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = (t.reshape(n, heads, length, dh) for t in T.split(qkv, [1, 1, 1], axis=0))
    out = T.attention(q, k, v, causal=causal).transpose(0, 2, 1, 3).reshape(n, length, dim)
    return linear(out, p, f"{prefix}.proj")


def block(x, p: ParameterStore, prefix: str, heads: int, causal: bool):
    h = T.layernorm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"], LN_EPS)
    x = x + self_attention(h, p, prefix, heads, causal)
    h = T.layernorm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"], LN_EPS)
    h = linear(T.gelu(linear(h, p, f"{prefix}.fc1")), p, f"{prefix}.fc2")
    return x + h
