"""Held-out accuracy, scaling curves, linear probes and paired A/B comparisons."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import data as D
from . import model as M
from . import tensor as T
from .errors import ConfigError
from .optim import AdamWState, step as adamw_step
from .params import ParameterStore, bitwise_equal, scaled_uniform
from .vision import VisionConfig, pooled_features_batch

# ---------------------------------------------------------------------------
# predictors


class ModelPredictor:
    """Constrained argmax decoding of the answer span.

    Each answer position takes the argmax over that family's closed candidate
    set, reading logits with the gold prefix (teacher forcing).  A sequence is
    exactly right under this reading iff greedy decoding reproduces it, so
    exact-match scores equal greedy ones.
    """

    def __init__(self, cfg: M.ModelConfig, params: ParameterStore, batch_size: int = 32):
        self.cfg, self.params, self.batch_size = cfg, params, batch_size

    def predict(self, samples: list[M.Sample]) -> list[list[int]]:
        out = []
        with T.no_grad():
            for lo in range(0, len(samples), self.batch_size):
                chunk = samples[lo : lo + self.batch_size]
                logits, seqs = M.batch_logits(chunk, self.cfg, self.params)
                for b, (s, seq) in enumerate(zip(chunk, seqs)):
                    cands = D.candidates(s)
                    base = seq.n_visual + s.supervised_from - 1
                    pred = []
                    for k, c in enumerate(cands):
                        row = logits.data[b, base + k]
                        pred.append(int(c[int(np.argmax(row[c]))]))
                    out.append(pred)
        return out


class OraclePredictor:
    """Reads every answer back from the pixels with the rule-based solver."""

    def predict(self, samples):
        return [D.solve(s) for s in samples]


class RandomPredictor:
    """Uniform draws from each position's candidate set."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def predict(self, samples):
        return [[int(self.rng.choice(c)) for c in D.candidates(s)] for s in samples]


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    per_family: dict
    missing: list = field(default_factory=list)

    @property
    def average(self) -> float:
        """Unweighted mean over the families that were scored."""
        return float(np.mean(list(self.per_family.values()))) if self.per_family else float("nan")

    def average_over(self, families) -> float:
        vals = [self.per_family[f] for f in families if f in self.per_family]
        return float(np.mean(vals)) if vals else float("nan")


def evaluate(predictor, suite: D.EvalSuite, families=D.EVAL_FAMILIES) -> EvalResult:
    """Exact-match accuracy on the answer span per family.

    ``predictor`` is anything with ``predict(samples)``; a ``(cfg, params)``
    pair is wrapped in a ``ModelPredictor``.
    """
    if isinstance(predictor, tuple):
        predictor = ModelPredictor(*predictor)
    if not suite.samples:
        raise ConfigError("evaluation suite is empty")
    per, missing = {}, []
    for fam in families:
        samples = suite.samples.get(fam)
        if not samples:
            missing.append(fam)
            continue
        preds = predictor.predict(samples)
        hits = [p is not None and list(p) == list(s.text_tokens[s.supervised_from :]) for p, s in zip(preds, samples)]
        per[fam] = float(np.mean(hits))
    return EvalResult(per, missing)


# ---------------------------------------------------------------------------
# scaling curves


@dataclass
class CurvePoint:
    data_size: int
    per_seed: list

    def __post_init__(self):
        if not self.per_seed:
            raise ConfigError("a curve point needs at least one seed")

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_seed))


def spearman(points: list[CurvePoint]) -> float:
    """Rank correlation of mean score vs log size; NaN when either side is constant."""
    sizes = np.log([p.data_size for p in points])
    means = [p.mean for p in points]
    if len(set(means)) < 2 or len(set(sizes)) < 2:
        return float("nan")
    return float(stats.spearmanr(sizes, means).statistic)


def scaling_curve(sizes, seeds, train_and_score) -> list[CurvePoint]:
    """Aggregate ``train_and_score(seed, sizes) -> {size: score}`` over seeds.

    The callback trains stage 3 once per seed and reports the score at every
    size boundary (see ``experiments.scaling_scores``).
    """
    sizes = list(sizes)
    if sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
        raise ConfigError("sizes must be strictly ascending")
    if len(list(seeds)) < 1:
        raise ConfigError("need at least one seed")
    table = {n: [] for n in sizes}
    for seed in seeds:
        scores = train_and_score(seed, sizes)
        for n in sizes:
            table[n].append(float(scores[n]))
    return [CurvePoint(n, table[n]) for n in sizes]


# ---------------------------------------------------------------------------
# linear probe


@dataclass(frozen=True)
class ProbeConfig:
    classes: int = 4
    epochs: int = 10
    lr: float = 3e-3
    hidden: int = 32
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError("probe needs at least 2 classes")
        if self.epochs < 1:
            raise ConfigError("probe epochs must be >= 1")


@dataclass
class ProbeResult:
    accuracy: float
    epochs_run: int
    train_losses: list


def linear_probe(
    vision_params: ParameterStore,
    vcfg: VisionConfig,
    probe: ProbeConfig,
    train: tuple,
    test: tuple,
) -> ProbeResult:
    """Frozen pooled features -> fresh two-layer MLP trained ``probe.epochs`` epochs.

    ``train`` and ``test`` are ``(images [n, h, w, c], labels [n])``.
    """
    xs, ys = train
    xt, yt = test
    for y in (ys, yt):
        if y.size and (y.min() < 0 or y.max() >= probe.classes):
            raise ConfigError(f"labels outside [0, {probe.classes})")
    before = vision_params.snapshot("vision")
    ftr = pooled_features_batch(np.asarray(xs), vcfg, vision_params)
    fte = pooled_features_batch(np.asarray(xt), vcfg, vision_params)
    mu, sd = ftr.mean(0), ftr.std(0) + 1e-6
    ftr, fte = (ftr - mu) / sd, (fte - mu) / sd
    rng = np.random.default_rng([probe.seed, 31])
    d = ftr.shape[1]
    head = ParameterStore()
    head.add("connector.probe.w1", scaled_uniform(rng, d, (d, probe.hidden)), "connector")
    head.add("connector.probe.b1", np.zeros(probe.hidden), "connector")
    head.add("connector.probe.w2", scaled_uniform(rng, probe.hidden, (probe.hidden, probe.classes)), "connector")
    head.add("connector.probe.b2", np.zeros(probe.classes), "connector")

    def logits(f):
        h = T.gelu(T.as_tensor(f) @ head["connector.probe.w1"] + head["connector.probe.b1"])
        return h @ head["connector.probe.w2"] + head["connector.probe.b2"]

    state = AdamWState(probe.lr)
    losses = []
    n = len(ftr)
    for epoch in range(probe.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, probe.batch_size):
            idx = order[lo : lo + probe.batch_size]
            head.zero_grad()
            loss = T.softmax_ce_masked(logits(ftr[idx]), ys[idx], np.ones(len(idx), bool))
            T.backward(loss)
            adamw_step(head, head.trainable_grads(), state)
            total += float(loss.data) * len(idx)
        losses.append(total / n)
    with T.no_grad():
        pred = np.argmax(logits(fte).data, axis=1)
    if not bitwise_equal(before, vision_params.snapshot("vision")):
        raise AssertionError("probe modified the backbone")
    return ProbeResult(float(np.mean(pred == yt)), probe.epochs, losses)


# ---------------------------------------------------------------------------
# A/B comparison


@dataclass
class AbTable:
    label_a: str
    label_b: str
    rows: list  # (seed, score_a, score_b, delta)

    @property
    def mean_delta(self) -> float:
        return float(np.mean([r[3] for r in self.rows]))

    def format(self) -> str:
        lines = [f"seed,{self.label_a},{self.label_b},delta"]
        lines += [f"{s},{a:.4f},{b:.4f},{d:+.4f}" for s, a, b, d in self.rows]
        lines.append(f"mean,,,{self.mean_delta:+.4f}")
        return "\n".join(lines)


def ab_compare(label_a, label_b, seeds, score, cfg_a=None, cfg_b=None) -> AbTable:
    """Paired per-seed scores; ``score(label, seed)`` must use the seed's shared data."""
    if cfg_a is not None and cfg_b is not None and cfg_a != cfg_b:
        raise ConfigError("A/B arms must share model configs")
    rows = []
    for seed in seeds:
        a = float(score(label_a, seed))
        b = float(score(label_b, seed))
        rows.append((seed, a, b, a - b))
    return AbTable(label_a, label_b, rows)
