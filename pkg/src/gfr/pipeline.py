"""Stage plans, regimes, and the staged training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as D
from . import model as M
from . import tensor as T
from .checkpoint import Checkpoint, rng_to_json
from .errors import ConfigError, NonFiniteError, StateError
from .optim import AccumulationState, AdamWState, accumulate_and_maybe_step
from .params import GROUPS, ParameterStore, bitwise_equal

ALL = ("vision", "connector", "language")


@dataclass(frozen=True)
class StagePlan:
    name: str
    trainable_groups: tuple
    learning_rate: float
    effective_batch: int
    epochs: int = 1
    mixture: str = ""
    micro_batch: int | None = None  # None: one micro-batch per step
    weight_decay: float = 0.0
    warmup_steps: int = 0

    def __post_init__(self):
        groups = tuple(self.trainable_groups)
        object.__setattr__(self, "trainable_groups", groups)
        if not groups:
            raise ConfigError(f"stage {self.name!r}: trainable_groups is empty")
        bad = set(groups) - set(GROUPS)
        if bad:
            raise ConfigError(f"stage {self.name!r}: unknown groups {sorted(bad)}")
        if not self.learning_rate > 0:
            raise ConfigError(f"stage {self.name!r}: learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigError(f"stage {self.name!r}: epochs must be >= 1")
        if self.effective_batch < 1:
            raise ConfigError(f"stage {self.name!r}: effective_batch must be >= 1")
        if self.effective_batch % self.micro:
            raise ConfigError(f"stage {self.name!r}: micro_batch must divide effective_batch")

    @property
    def micro(self) -> int:
        return self.micro_batch or self.effective_batch

    @property
    def accumulation_steps(self) -> int:
        return self.effective_batch // self.micro


@dataclass(frozen=True)
class Regime:
    regime_id: str
    stages: tuple

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ConfigError(f"regime {self.regime_id!r} has no stages")

    def stage(self, name: str) -> StagePlan:
        for s in self.stages:
            if s.name == name:
                return s
        raise ConfigError(f"regime {self.regime_id!r} has no stage {name!r}")


def _plan(name, groups, lr, batch, mixture):
    return StagePlan(name, tuple(groups), lr, batch, 1, mixture)


def builtin_regimes() -> dict[str, Regime]:
    """Paper-scale regime catalog; ``desk_regime`` shrinks the batch sizes."""
    coarse = _plan("stage1", ("connector",), 2e-4, 1920, "align_coarse")
    fine = _plan("stage2", ("vision", "connector"), 2e-5, 512, "align_fine")
    knowledge = _plan("stage3", ALL, 1e-5, 512, "knowledge")
    pretrain = _plan("pretrain", ("connector",), 2e-4, 1920, "eval_pretrain")
    sft = _plan("sft", ALL, 1e-5, 512, "eval_sft")
    vit_align = _plan("vit_align", ("vision", "connector"), 2e-5, 512, "eval_align")
    tiers = [replace(knowledge, name=f"stage3_tier{i}", mixture=f"knowledge_tier{i}") for i in range(3)]
    regimes = [
        Regime("sailvit_3stage", (coarse, fine, knowledge)),
        Regime("eval_2stage", (pretrain, sft)),
        Regime("eval_3stage", (pretrain, vit_align, sft)),
        Regime("llava_style", (pretrain, replace(sft, trainable_groups=("connector", "language")))),
        Regime("llava_style_unfrozen", (pretrain, sft)),
        Regime("freeze_llm", (coarse, fine, replace(knowledge, trainable_groups=("vision", "connector")))),
        Regime("aio", (coarse, fine, replace(knowledge, mixture="knowledge_aio"))),
        Regime("step_by_step", (coarse, fine, *tiers)),
        # stand-in for the pretrained language model every regime starts from
        Regime("lm_base", (_plan("lm_pretrain", ("language",), 1e-5, 2048, "lm_corpus"),)),
    ]
    return {r.regime_id: r for r in regimes}


def desk_regime(regime: Regime, divisor: int = 128, lr_scale: float = 1.0) -> Regime:
    """Divide every batch size by ``divisor`` and multiply every LR by ``lr_scale``.

    Both are global factors, so stage-to-stage LR and batch ratios survive.
    """
    if divisor < 1 or lr_scale <= 0:
        raise ConfigError("divisor must be >= 1 and lr_scale > 0")
    stages = []
    for s in regime.stages:
        b = max(1, int(round(s.effective_batch / divisor)))
        stages.append(replace(s, effective_batch=b, micro_batch=None, learning_rate=s.learning_rate * lr_scale))
    return Regime(regime.regime_id, tuple(stages))


# mixture weights per catalog entry, in thousands of samples at desk scale
_KNOWLEDGE = {"caption": 3.1, "ocr": 9.6, "openqa": 7.1, "text": 4.8, "math": 1.5, "shortqa": 0.9, "mix": 9.0}
TIER_SIZES = (21.0, 12.0, 3.5)


def desk_mixtures(seed: int = 0, scale: float = 1.0) -> dict:
    """Stage mixtures sized in thousands of samples times ``scale``.

    Values are ``MixtureSpec`` or, for unions, a tuple of other entry names.
    """
    def spec(weights, total_k, salt, **params):
        return D.MixtureSpec(weights, int(round(total_k * 1000 * scale)), seed=seed * 1000 + salt, params=params)

    out = {
        "align_coarse": spec({"caption": 4.9, "ocr": 3.1}, 8.0, 1),
        "align_fine": spec({"caption": 6.7, "ocr": 3.3, "video_caption": 1.0}, 11.0, 2),
        "knowledge": spec(_KNOWLEDGE, sum(_KNOWLEDGE.values()), 3),
        "eval_pretrain": spec({"caption": 4.9, "ocr": 3.1}, 8.0, 4),
        "eval_align": spec({"caption": 6.7, "ocr": 3.3, "video_caption": 1.0}, 3.0, 5),
        "eval_sft": spec(dict.fromkeys(D.EVAL_FAMILIES, 1.0), 3.0, 6),
        "lm_corpus": spec(dict.fromkeys(D.EVAL_FAMILIES, 1.0), 16.0, 7, symbolic=16),
    }
    # quality tier q has difficulty 2 - q; the stream visits the lowest tier first
    for q, size in enumerate(TIER_SIZES):
        out[f"knowledge_tier{q}"] = spec(_KNOWLEDGE, size, 10 + q, difficulty=2 - q)
    out["knowledge_aio"] = tuple(f"knowledge_tier{q}" for q in range(3))
    return out


# ---------------------------------------------------------------------------
# data streams


class SampleStream:
    """Random-access view over a mixture, or a seeded shuffle of a union of mixtures."""

    def __init__(self, specs, shuffle_seed: int | None = None, domain: int = D.DOMAIN_TRAIN):
        self.specs = list(specs)
        self.domain = domain
        self._fams = [D.family_sequence(s) for s in self.specs]
        self._index = [(k, i) for k, f in enumerate(self._fams) for i in range(len(f))]
        if shuffle_seed is not None:
            perm = np.random.default_rng([shuffle_seed, 104729]).permutation(len(self._index))
            self._index = [self._index[j] for j in perm]

    def __len__(self):
        return len(self._index)

    def __getitem__(self, j) -> M.Sample:
        k, i = self._index[j]
        return D.sample_at(self.specs[k], i, self._fams[k][i], self.domain)

    def __iter__(self):
        return (self[j] for j in range(len(self)))


def resolve_stream(ref: str, mixtures: dict) -> SampleStream:
    if ref not in mixtures:
        raise ConfigError(f"mixture {ref!r} is not defined")
    entry = mixtures[ref]
    if isinstance(entry, D.MixtureSpec):
        return SampleStream([entry])
    specs = []
    for name in entry:
        if not isinstance(mixtures.get(name), D.MixtureSpec):
            raise ConfigError(f"union {ref!r} refers to {name!r}, which is not a plain mixture")
        specs.append(mixtures[name])
    return SampleStream(specs, shuffle_seed=sum(s.seed for s in specs))


# ---------------------------------------------------------------------------
# sinks


class ListSink:
    """Collects training rows and stage-boundary checkpoints in memory."""

    def __init__(self):
        self.rows: list[tuple] = []
        self.checkpoints: list[Checkpoint] = []

    def log(self, run_id, stage, step, loss, lr):
        self.rows.append((run_id, stage, step, loss, lr))

    def checkpoint(self, ckpt: Checkpoint):
        self.checkpoints.append(ckpt)


@dataclass
class StageReport:
    name: str
    steps: int
    losses: list = field(default_factory=list)
    frozen_isolated: bool = True
    optimizer: AdamWState | None = None

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.losses)) if self.losses else float("nan")


def run_stage(
    plan: StagePlan,
    params: ParameterStore,
    stream,
    cfg: M.ModelConfig,
    sink=None,
    run_id: str = "run",
    seed: int = 0,
    reduction: str = "mean",
    on_step=None,
) -> StageReport:
    """Train ``params`` in place on ``stream`` for ``plan.epochs`` epochs.

    The trailing partial batch of each epoch is dropped.  Epoch 0 visits the
    stream in order, later epochs in a seeded permutation.  ``on_step(step,
    params)`` is called after every optimizer step.
    """
    n = len(stream)
    per_epoch = n // plan.effective_batch
    if per_epoch == 0:
        raise ConfigError(f"stage {plan.name!r}: mixture of {n} samples holds no full batch of {plan.effective_batch}")
    params.set_trainable(plan.trainable_groups)
    frozen = [g for g in GROUPS if g not in plan.trainable_groups]
    entry = {g: params.snapshot(g) for g in frozen}
    state = AdamWState(plan.learning_rate, weight_decay=plan.weight_decay, warmup_steps=plan.warmup_steps)
    acc = AccumulationState(plan.micro, plan.accumulation_steps)
    report = StageReport(plan.name, 0, optimizer=state)
    step = 0
    for epoch in range(plan.epochs):
        order = np.arange(n) if epoch == 0 else np.random.default_rng([seed, epoch, 15485863]).permutation(n)
        for b in range(per_epoch):
            lr = state.current_lr()
            micro_losses = []
            for k in range(plan.accumulation_steps):
                lo = b * plan.effective_batch + k * plan.micro
                batch = [stream[int(j)] for j in order[lo : lo + plan.micro]]
                if len(batch) < plan.micro:
                    raise ConfigError(f"stage {plan.name!r}: data exhausted at step {step}")
                params.zero_grad()
                try:
                    loss = M.batch_loss(batch, cfg, params, reduction)
                    if loss.node is None:
                        # e.g. a text-only batch while only the connector trains
                        grads = {nm: np.zeros_like(params[nm].data) for nm in params.trainable_names()}
                    else:
                        T.backward(loss)
                        grads = params.trainable_grads()
                    accumulate_and_maybe_step(params, grads, acc, state)
                except NonFiniteError as e:
                    raise NonFiniteError(f"stage {plan.name!r}, step {step}: {e}") from e
                micro_losses.append(float(loss.data))
            params.zero_grad()
            step += 1
            value = float(np.mean(micro_losses))
            if not math.isfinite(value):
                raise NonFiniteError(f"stage {plan.name!r}, step {step}: loss {value}")
            report.losses.append(value)
            if sink is not None:
                sink.log(run_id, plan.name, step, value, lr)
            if on_step is not None:
                on_step(step, params)
    report.steps = step
    for g in frozen:
        if not bitwise_equal(entry[g], params.snapshot(g)):
            report.frozen_isolated = False
            raise StateError(f"stage {plan.name!r} modified frozen group {g!r}")
    return report


@dataclass
class RegimeResult:
    checkpoint: Checkpoint
    reports: list


def run_regime(
    regime: Regime,
    params: ParameterStore,
    cfg: M.ModelConfig,
    mixtures: dict,
    sink=None,
    run_id: str | None = None,
    seed: int = 0,
    start_stage: int = 0,
    stop_after: int | None = None,
    reduction: str = "mean",
) -> RegimeResult:
    """Run stages ``start_stage..stop_after`` in order on ``params`` (in place).

    A checkpoint goes to ``sink.checkpoint`` after every stage; resuming from
    one means calling again with ``start_stage = cursor['stage_index'] + 1``.
    """
    run_id = run_id or regime.regime_id
    last = len(regime.stages) - 1 if stop_after is None else stop_after
    reports = []
    ckpt = None
    for i in range(start_stage, last + 1):
        plan = regime.stages[i]
        stream = resolve_stream(plan.mixture, mixtures)
        rep = run_stage(plan, params, stream, cfg, sink, run_id, seed=seed * 100 + i, reduction=reduction)
        reports.append(rep)
        ckpt = Checkpoint(
            params.copy(),
            {"regime_id": regime.regime_id, "stage_index": i, "stage": plan.name, "step": rep.steps, "seed": seed},
            rng_to_json(np.random.default_rng([seed, i + 1])),
            rep.optimizer,
        )
        if sink is not None and hasattr(sink, "checkpoint"):
            sink.checkpoint(ckpt)
    if ckpt is None:
        ckpt = Checkpoint(params.copy(), {"regime_id": regime.regime_id, "stage_index": start_stage - 1, "seed": seed})
    return RegimeResult(ckpt, reports)


def transfer_backbone(
    source: ParameterStore | None, cfg: M.ModelConfig, seed: int, language: ParameterStore | None = None
) -> ParameterStore:
    """Fresh model for an evaluation regime: vision from ``source`` (or random init
    when None), a seeded new connector, and ``language`` (or a seeded new LM)."""
    base = M.init_params(cfg, seed)
    out = ParameterStore()
    vis = source if source is not None else base
    out.merge(vis, groups=("vision",))
    out.merge(base, groups=("connector",))
    out.merge(language if language is not None else base, groups=("language",))
    return out
