"""Decoder-only causal transformer over mixed visual/text token sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .errors import ConfigError, EmptyLossError, LengthError
from .params import ParameterStore, scaled_uniform


@dataclass(frozen=True)
class LmConfig:
    vocab_size: int = 256
    model_dim: int = 32
    depth: int = 2
    heads: int = 2
    max_seq_len: int = 64

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ConfigError("model_dim must be divisible by heads")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")


class TokenSequence:
    """Ordered slots, each a text token id or a row of ``visual_block``.

    ``is_visual[i]`` marks visual slots; for those ``values[i]`` indexes
    ``visual_block``, otherwise it is a token id.
    """

    def __init__(self, is_visual, values, loss_mask, visual_block=None, max_seq_len=None):
        self.is_visual = np.asarray(is_visual, dtype=bool)
        self.values = np.asarray(values, dtype=np.int64)
        self.loss_mask = np.asarray(loss_mask, dtype=bool)
        self.visual_block = visual_block
        n = len(self.is_visual)
        if self.values.shape != (n,) or self.loss_mask.shape != (n,):
            raise ConfigError("slots, values and loss_mask must align")
        if (self.loss_mask & self.is_visual).any():
            raise ConfigError("loss_mask may only select text slots")
        vis_idx = self.values[self.is_visual]
        n_vis = 0 if visual_block is None else visual_block.shape[0]
        if not np.array_equal(vis_idx, np.arange(n_vis)):
            raise ConfigError("visual slots must use each visual_block row exactly once, in order")
        if max_seq_len is not None and n > max_seq_len:
            raise LengthError(f"sequence of length {n} exceeds max_seq_len {max_seq_len}")

    @classmethod
    def build(cls, n_visual: int, text_tokens, supervised_from: int, visual_block=None, max_seq_len=None):
        """Visual block first, then text; loss on text positions >= ``supervised_from``."""
        text = np.asarray(text_tokens, dtype=np.int64)
        is_vis = np.r_[np.ones(n_visual, bool), np.zeros(len(text), bool)]
        values = np.r_[np.arange(n_visual), text]
        mask = np.r_[np.zeros(n_visual, bool), np.arange(len(text)) >= supervised_from]
        return cls(is_vis, values, mask, visual_block, max_seq_len)

    def __len__(self):
        return len(self.is_visual)

    @property
    def n_visual(self):
        return int(self.is_visual.sum())

    def targets(self):
        """Next-token targets and mask aligned to logits rows ``0..L-2``."""
        tgt = np.where(self.is_visual[1:], 0, self.values[1:])
        return tgt, self.loss_mask[1:].copy()


def init_language(cfg: LmConfig, seed: int) -> ParameterStore:
    rng = np.random.default_rng([seed, 3])
    store = ParameterStore()
    store.add("language.tok", rng.normal(0.0, 1.0, (cfg.vocab_size, cfg.model_dim)), "language")
    store.add("language.pos", rng.normal(0.0, 0.1, (cfg.max_seq_len, cfg.model_dim)), "language")
    for i in range(cfg.depth):
        nn.init_block(store, f"language.blocks.{i}", cfg.model_dim, "language", rng)
    store.add("language.lnf.g", np.ones(cfg.model_dim), "language")
    store.add("language.lnf.b", np.zeros(cfg.model_dim), "language")
    store.add("language.head.w", scaled_uniform(rng, cfg.model_dim, (cfg.model_dim, cfg.vocab_size)), "language")
    store.add("language.head.b", np.zeros(cfg.vocab_size), "language")
    return store


def embed_rows(visual_rows, text_ids, index: np.ndarray, params: ParameterStore):
    """Gather input rows: ``index`` addresses ``concat(visual_rows, tok[text_ids])``, -1 is padding."""
    text = T.gather_rows(params["language.tok"], np.asarray(text_ids, dtype=np.int64))
    src = text if visual_rows is None else T.concat([visual_rows, text], axis=0)
    return T.gather_rows(src, index)


def run(x, cfg: LmConfig, params: ParameterStore):
    """Causal stack on embedded inputs ``[B, L, D]`` -> logits ``[B, L, V]``."""
    length = x.shape[1]
    if length > cfg.max_seq_len:
        raise LengthError(f"sequence of length {length} exceeds max_seq_len {cfg.max_seq_len}")
    pos = params["language.pos"]
    if length < cfg.max_seq_len:
        pos = T.split(pos, [length, cfg.max_seq_len - length], axis=0)[0]
    x = x + pos
    for i in range(cfg.depth):
        x = nn.block(x, params, f"language.blocks.{i}", cfg.heads, causal=True)
    x = T.layernorm(x, params["language.lnf.g"], params["language.lnf.b"], nn.LN_EPS)
    return nn.linear(x, params, "language.head")


def batch_index(seqs: list[TokenSequence]):
    """Row index into ``concat(all visual rows, all text rows)`` for a padded batch."""
    lengths = [len(s) for s in seqs]
    L = max(lengths)
    n_vis_total = sum(s.n_visual for s in seqs)
    index = np.full((len(seqs), L), -1, dtype=np.int64)
    text_ids = []
    v_off = 0
    t_off = n_vis_total
    for b, s in enumerate(seqs):
        vis = s.is_visual
        index[b, : len(s)][vis] = v_off + s.values[vis]
        n_text = int((~vis).sum())
        index[b, : len(s)][~vis] = t_off + np.arange(n_text)
        text_ids.append(s.values[~vis])
        v_off += s.n_visual
        t_off += n_text
    return index, np.concatenate(text_ids) if text_ids else np.zeros(0, np.int64)


def forward_batch(seqs: list[TokenSequence], cfg: LmConfig, params: ParameterStore, visual_rows=None):
    """Logits ``[B, Lmax, V]`` for right-padded sequences.

    ``visual_rows`` (if given) must already hold every sequence's visual block
    stacked in batch order; otherwise the per-sequence blocks are concatenated.
    """
    if visual_rows is None:
        blocks = [s.visual_block for s in seqs if s.n_visual]
        visual_rows = T.concat(blocks, axis=0) if blocks else None
    index, text_ids = batch_index(seqs)
    x = embed_rows(visual_rows, text_ids, index.reshape(-1), params)
    return run(x.reshape(len(seqs), index.shape[1], cfg.model_dim), cfg, params)


def forward_logits(seq: TokenSequence, cfg: LmConfig, params: ParameterStore) -> T.Tensor:
    """Logits ``[L, V]``; position ``i`` only attends to positions ``<= i``."""
    logits = forward_batch([seq], cfg, params)
    return logits.reshape(len(seq), cfg.vocab_size)


def loss_rows(seqs: list[TokenSequence], width: int, reduction: str = "mean"):
    """Targets, mask and weights over flattened ``[B*width]`` logits rows.

    Each sequence's loss is reduced on its own (mean or sum over its masked
    positions) and the batch takes the mean over sequences.
    """
    B = len(seqs)
    targets = np.zeros((B, width), dtype=np.int64)
    mask = np.zeros((B, width), dtype=bool)
    weights = np.zeros((B, width))
    for b, s in enumerate(seqs):
        tgt, m = s.targets()
        count = int(m.sum())
        if count == 0:
            raise EmptyLossError(f"sequence {b} has no supervised position after the first slot")
        n = len(tgt)
        targets[b, :n] = tgt
        mask[b, :n] = m
        weights[b, :n] = m * ((1.0 / count if reduction == "mean" else 1.0) / B)
    return targets.reshape(-1), mask.reshape(-1), weights.reshape(-1)


def batch_sequence_loss(seqs, cfg: LmConfig, params: ParameterStore, reduction="mean", visual_rows=None):
    logits = forward_batch(seqs, cfg, params, visual_rows)
    B, L, V = logits.shape
    targets, mask, weights = loss_rows(seqs, L, reduction)
    return T.softmax_ce_masked(logits.reshape(B * L, V), targets, mask, row_weights=weights)


def sequence_loss(seq: TokenSequence, cfg: LmConfig, params: ParameterStore, reduction="mean") -> T.Tensor:
    """Shifted next-token loss: logits at ``i-1`` score slot ``i`` where ``loss_mask[i]``."""
    return batch_sequence_loss([seq], cfg, params, reduction)
