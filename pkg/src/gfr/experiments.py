"""Desk-scale experiment drivers shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import data as D
from . import evaluate as E
from . import model as M
from . import pipeline as P
from .params import ParameterStore

EVAL_LM_SALT = 7001  # eval regimes get a connector/LM seed disjoint from training


@dataclass(frozen=True)
class DeskSetup:
    cfg: M.ModelConfig = field(default_factory=M.ModelConfig)
    divisor: int = 128
    lr_scale: float = 100.0
    data_scale: float = 1.0
    eval_per_family: int = 200
    reduction: str = "mean"
    eval_families: tuple = D.EVAL_FAMILIES
    regimes: tuple = ()  # already desk-scaled regimes that shadow builtins of the same id
    mixture_fn: object = None  # seed -> mixture dict; defaults to the desk mixtures

    def regime(self, regime_id: str) -> P.Regime:
        for r in self.regimes:
            if r.regime_id == regime_id:
                return r
        return P.desk_regime(P.builtin_regimes()[regime_id], self.divisor, self.lr_scale)

    def mixtures(self, seed: int) -> dict:
        if self.mixture_fn is not None:
            return self.mixture_fn(seed)
        return P.desk_mixtures(seed, self.data_scale)

    def suite(self, seed: int) -> D.EvalSuite:
        return D.EvalSuite.build(self.eval_per_family, seed=seed, families=self.eval_families)


def base_language(setup: DeskSetup, seed: int, sink=None) -> ParameterStore:
    """Language model pretrained on symbolic scene text; shared by every regime of a seed."""
    params = M.init_params(setup.cfg, seed)
    P.run_regime(setup.regime("lm_base"), params, setup.cfg, setup.mixtures(seed), sink, seed=seed, reduction=setup.reduction)
    return params.subset(("language",))


def initial_params(setup: DeskSetup, seed: int, language: ParameterStore | None = None) -> ParameterStore:
    base = M.init_params(setup.cfg, seed)
    out = base.subset(("vision", "connector"))
    out.merge(language if language is not None else base_language(setup, seed), groups=("language",))
    return out


def train_backbone(setup: DeskSetup, seed: int, regime_id: str = "sailvit_3stage", sink=None, stop_after=None, language=None):
    params = initial_params(setup, seed, language)
    res = P.run_regime(
        setup.regime(regime_id), params, setup.cfg, setup.mixtures(seed), sink,
        seed=seed, stop_after=stop_after, reduction=setup.reduction,
    )
    return params, res


def eval_regime_score(
    setup: DeskSetup, seed: int, backbone: ParameterStore | None, regime_id: str = "eval_2stage", suite=None, sink=None,
    language=None,
) -> E.EvalResult:
    """Drop ``backbone``'s vision weights (random init when None) into an evaluation regime
    on top of the seed's base language model and a fresh connector."""
    if language is None:
        language = base_language(setup, seed)
    params = P.transfer_backbone(backbone, setup.cfg, seed + EVAL_LM_SALT, language)
    P.run_regime(setup.regime(regime_id), params, setup.cfg, setup.mixtures(seed), sink, seed=seed, reduction=setup.reduction)
    return E.evaluate((setup.cfg, params), suite or setup.suite(seed), setup.eval_families)


@dataclass
class BackboneRow:
    seed: int
    trained: E.EvalResult
    random: E.EvalResult


def backbone_comparison(setup: DeskSetup, seeds, regime_id: str = "eval_2stage", backbones=None) -> list[BackboneRow]:
    """Trained-by-three-stages backbone vs random-init backbone under one eval regime."""
    rows = []
    for seed in seeds:
        lm = base_language(setup, seed)
        trained = backbones[seed] if backbones else train_backbone(setup, seed, language=lm)[0]
        suite = setup.suite(seed)
        rows.append(
            BackboneRow(
                seed,
                eval_regime_score(setup, seed, trained, regime_id, suite, language=lm),
                eval_regime_score(setup, seed, None, regime_id, suite, language=lm),
            )
        )
    return rows


def scaling_scores(setup: DeskSetup, seed: int, sizes, shared: ParameterStore | None = None) -> dict:
    """Stage-3 accuracy after ``n`` samples for each ``n`` in ``sizes``.

    Stages 1-2 run once; stage 3 runs once over the stratified stream of the
    largest size and the model is scored at every size boundary.  With a
    constant LR and one epoch this equals separate runs on each prefix.
    """
    regime = setup.regime("sailvit_3stage")
    mix = setup.mixtures(seed)
    if shared is None:
        shared, _ = train_backbone(setup, seed, stop_after=1)
    params = shared.copy()
    plan = regime.stages[2]
    sizes = list(sizes)
    stream = P.SampleStream(D.scaling_subsets(mix[plan.mixture], sizes)[-1:])
    suite = setup.suite(seed)
    batch = plan.effective_batch
    at = {n // batch: n for n in sizes}
    scores = {}

    def on_step(step, p):
        if step in at:
            scores[at[step]] = E.evaluate((setup.cfg, p), suite, setup.eval_families).average

    P.run_stage(plan, params, stream, setup.cfg, seed=seed * 100 + 2, reduction=setup.reduction, on_step=on_step)
    return scores


@dataclass
class ProbeRow:
    seed: int
    trained: float
    random: float


def probe_sets(seed: int, n_train: int = 512, n_test: int = 512, classes: int = 4):
    train = D.shape_classification(n_train, seed, classes, domain=D.DOMAIN_PROBE)
    test = D.shape_classification(n_test, seed + 10_000, classes, domain=D.DOMAIN_PROBE)
    return train, test


def probe_comparison(setup: DeskSetup, seeds, probe: E.ProbeConfig, backbones=None, n_train=512, n_test=512):
    rows = []
    for seed in seeds:
        trained = backbones[seed] if backbones else train_backbone(setup, seed)[0]
        random = M.init_params(setup.cfg, seed)
        train, test = probe_sets(seed, n_train, n_test, probe.classes)
        pc = replace(probe, seed=seed)
        a = E.linear_probe(trained, setup.cfg.vision, pc, train, test).accuracy
        b = E.linear_probe(random, setup.cfg.vision, pc, train, test).accuracy
        rows.append(ProbeRow(seed, a, b))
    return rows


def mean(xs) -> float:
    return float(np.mean(list(xs)))
