"""Vision encoder + connector + decoder as one differentiable model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import connector, decoder, vision
from . import tensor as T
from .decoder import LmConfig, TokenSequence
from .errors import ConfigError
from .params import ParameterStore
from .vision import VisionConfig


@dataclass(frozen=True)
class ModelConfig:
    vision: VisionConfig = VisionConfig()
    lm: LmConfig = LmConfig()
    connector_hidden: int | None = None  # defaults to lm.model_dim


@dataclass
class Sample:
    """Images (zero, one, or several ordered frames) followed by text.

    The loss covers text positions ``>= supervised_from``.
    """

    images: list
    text_tokens: np.ndarray
    supervised_from: int
    family: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.text_tokens = np.asarray(self.text_tokens, dtype=np.int64)
        if not 0 <= self.supervised_from < len(self.text_tokens):
            raise ConfigError(f"supervised_from={self.supervised_from} outside text of length {len(self.text_tokens)}")


def init_params(cfg: ModelConfig, seed: int, vision_seed=None, connector_seed=None, language_seed=None) -> ParameterStore:
    store = ParameterStore()
    store.merge(vision.init_vision(cfg.vision, seed if vision_seed is None else vision_seed))
    store.merge(
        connector.init_connector(
            seed if connector_seed is None else connector_seed, cfg.vision.out_dim, cfg.lm.model_dim, cfg.connector_hidden
        )
    )
    store.merge(decoder.init_language(cfg.lm, seed if language_seed is None else language_seed))
    return store


def _tiles(sample: Sample, cfg: VisionConfig):
    return [vision.make_tiles(np.asarray(img), cfg) for img in sample.images]


def visual_rows(samples: list[Sample], cfg: ModelConfig, params: ParameterStore):
    """Connector-projected visual rows for every image of every sample, batch order.

    Returns ``(rows or None, per-sample visual counts)``.
    """
    tiles, counts = [], []
    for s in samples:
        ts = _tiles(s, cfg.vision)
        tiles.extend(ts)
        counts.append(sum(len(t) for t in ts) * cfg.vision.shuffled_tokens_per_tile)
    if not tiles:
        return None, counts
    stack = np.concatenate(tiles, axis=0)
    enc = vision.encode_tiles(stack, cfg.vision, params)
    flat = enc.reshape(enc.shape[0] * enc.shape[1], cfg.vision.out_dim)
    return connector.project(flat, params), counts


def _sequences(samples, counts, cfg: ModelConfig, rows=None):
    seqs = []
    off = 0
    for s, n in zip(samples, counts):
        block = None
        if n:
            block = rows if len(samples) == 1 and rows is not None else _RowRef(rows, off, n)
        seqs.append(TokenSequence.build(n, s.text_tokens, s.supervised_from, block, cfg.lm.max_seq_len))
        off += n
    return seqs


class _RowRef:
    """Shape-only stand-in for a slice of the batch's visual rows."""

    def __init__(self, rows, start, n):
        self.rows, self.start = rows, start
        self.shape = (n, rows.shape[1])


def assemble(sample: Sample, cfg: ModelConfig, params: ParameterStore) -> TokenSequence:
    """Visual tokens of all frames (frame order) then text; loss on text from ``supervised_from``."""
    rows, counts = visual_rows([sample], cfg, params)
    return _sequences([sample], counts, cfg, rows)[0]


def batch_logits(samples: list[Sample], cfg: ModelConfig, params: ParameterStore):
    rows, counts = visual_rows(samples, cfg, params)
    seqs = _sequences(samples, counts, cfg, rows)
    return decoder.forward_batch(seqs, cfg.lm, params, visual_rows=rows), seqs


def batch_loss(samples: list[Sample], cfg: ModelConfig, params: ParameterStore, reduction: str = "mean") -> T.Tensor:
    """Mean over samples of each sample's masked next-token loss."""
    rows, counts = visual_rows(samples, cfg, params)
    seqs = _sequences(samples, counts, cfg, rows)
    return decoder.batch_sequence_loss(seqs, cfg.lm, params, reduction, visual_rows=rows)


def trainable_grads(params: ParameterStore) -> dict[str, np.ndarray]:
    return params.trainable_grads()
