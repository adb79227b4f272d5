"""Run configuration: a TOML file with a fixed, validated schema.

Layout::

    [run]              seed, regime, out_dir, precision, loss_reduction,
                       divisor, lr_scale, data_scale, base_lm
    [model.vision]     VisionConfig fields
    [model.language]   LmConfig fields
    [model.connector]  hidden
    [mixtures.NAME]    components = {family = weight, ...}, total, order,
                       difficulty, symbolic; or union = ["a", "b"]
    [eval]             per_family, families, seeds
    [[stages]]         optional inline plans: name, groups, lr, batch,
                       epochs, mixture, micro_batch, weight_decay, warmup_steps

Without ``[[stages]]`` the builtin regime named by ``run.regime`` is used,
scaled by ``divisor`` and ``lr_scale``.  Mixture sections override or extend
the builtin desk mixtures; mixture seeds are offset by ``run.seed * 1000``.
Unknown keys are errors reported with their line number.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import tomli

from . import data as D
from . import pipeline as P
from .decoder import LmConfig
from .errors import ConfigError
from .model import ModelConfig
from .vision import VisionConfig

RUN_KEYS = {
    "seed": int,
    "regime": str,
    "out_dir": str,
    "precision": str,
    "loss_reduction": str,
    "divisor": int,
    "lr_scale": float,
    "data_scale": float,
    "base_lm": bool,
}
EVAL_KEYS = {"per_family": int, "families": list, "seeds": list}
MIXTURE_KEYS = {"components": dict, "total": int, "order": str, "difficulty": int, "symbolic": int, "union": list}
STAGE_KEYS = {
    "name": str,
    "groups": list,
    "lr": float,
    "batch": int,
    "epochs": int,
    "mixture": str,
    "micro_batch": int,
    "weight_decay": float,
    "warmup_steps": int,
}
CONNECTOR_KEYS = {"hidden": int}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    regime: P.Regime = None
    mixtures: dict = field(default_factory=dict)
    seed: int = 0
    out_dir: str = "runs"
    precision: str = "float64"
    loss_reduction: str = "mean"
    base_lm: bool = True
    eval_per_family: int = 200
    eval_families: tuple = D.EVAL_FAMILIES
    eval_seeds: tuple = (0, 1, 2)
    divisor: int = 128
    lr_scale: float = 100.0
    data_scale: float = 1.0
    source_hash: str = ""

    def with_seed(self, seed: int) -> "RunConfig":
        """Same config with mixture seeds re-derived for ``seed``."""
        out = RunConfig(**{f.name: getattr(self, f.name) for f in fields(self)})
        out.mixtures = {k: _reseed(v, self.seed, seed) for k, v in self.mixtures.items()}
        out.seed = seed
        return out


def _reseed(entry, old, new):
    if isinstance(entry, D.MixtureSpec):
        return replace(entry, seed=entry.seed - old * 1000 + new * 1000)
    return entry


class _Lines:
    """Maps (section path, key) to the line that defines it, for diagnostics."""

    header = re.compile(r"^\s*\[\[?\s*([^\]]+?)\s*\]\]?\s*(#.*)?$")
    assign = re.compile(r"^\s*([A-Za-z0-9_\-\"']+)\s*=")

    def __init__(self, text: str):
        self.where = {}
        section = ""
        for n, line in enumerate(text.splitlines(), 1):
            m = self.header.match(line)
            if m:
                section = m.group(1).replace('"', "").replace(" ", "")
                self.where.setdefault((section, None), n)
                continue
            m = self.assign.match(line)
            if m:
                self.where.setdefault((section, m.group(1).strip("\"'")), n)

    def of(self, section: str, key: str | None = None) -> str:
        n = self.where.get((section, key))
        return f"line {n}: " if n else ""


def _check_keys(table: dict, allowed, section: str, lines: _Lines):
    for k, v in table.items():
        if k not in allowed:
            raise ConfigError(f"{lines.of(section, k)}unknown key {k!r} in [{section}]")
        want = allowed[k] if isinstance(allowed, dict) else None
        if want is float and isinstance(v, int) and not isinstance(v, bool):
            continue
        if want is not None and (not isinstance(v, want) or (want is int and isinstance(v, bool))):
            raise ConfigError(f"{lines.of(section, k)}[{section}] {k} should be {want.__name__}, got {type(v).__name__}")


def _dataclass_section(cls, table: dict, section: str, lines: _Lines):
    allowed = {f.name: None for f in fields(cls)}
    _check_keys(table, allowed, section, lines)
    try:
        return cls(**table)
    except (TypeError, ConfigError) as e:
        raise ConfigError(f"{lines.of(section)}[{section}]: {e}") from e


def _mixture(name: str, table: dict, seed: int, salt: int, scale: float, lines: _Lines):
    section = f"mixtures.{name}"
    _check_keys(table, MIXTURE_KEYS, section, lines)
    if "union" in table:
        if set(table) != {"union"}:
            raise ConfigError(f"{lines.of(section)}[{section}]: a union takes no other keys")
        return tuple(table["union"])
    if "components" not in table or "total" not in table:
        raise ConfigError(f"{lines.of(section)}[{section}] needs components and total")
    params = {k: table[k] for k in ("difficulty", "symbolic") if k in table}
    try:
        return D.MixtureSpec(
            table["components"],
            int(round(table["total"] * scale)),
            seed=seed * 1000 + salt,
            order=table.get("order", "shuffle"),
            params=params,
        )
    except ConfigError as e:
        raise ConfigError(f"{lines.of(section)}[{section}]: {e}") from e


def _stage(i: int, table: dict, lines: _Lines) -> P.StagePlan:
    section = "stages"
    _check_keys(table, STAGE_KEYS, section, lines)
    missing = [k for k in ("name", "groups", "lr", "batch", "mixture") if k not in table]
    if missing:
        raise ConfigError(f"stage #{i + 1} is missing {missing}")
    try:
        return P.StagePlan(
            table["name"],
            tuple(table["groups"]),
            float(table["lr"]),
            table["batch"],
            table.get("epochs", 1),
            table["mixture"],
            table.get("micro_batch"),
            float(table.get("weight_decay", 0.0)),
            table.get("warmup_steps", 0),
        )
    except ConfigError as e:
        raise ConfigError(f"stage #{i + 1}: {e}") from e


def parse_config(text: str, out_override: str | None = None) -> RunConfig:
    lines = _Lines(text)
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML: {e}") from e
    top = {"run", "model", "mixtures", "eval", "stages"}
    for k in doc:
        if k not in top:
            raise ConfigError(f"{lines.of(k)}unknown section [{k}]")

    run = doc.get("run", {})
    _check_keys(run, RUN_KEYS, "run", lines)
    cfg = RunConfig()
    for k, v in run.items():
        if k != "regime":
            setattr(cfg, k, v)
    if cfg.precision not in ("float64", "float32"):
        raise ConfigError(f"{lines.of('run', 'precision')}precision must be float64 or float32")
    if cfg.loss_reduction not in ("mean", "sum"):
        raise ConfigError(f"{lines.of('run', 'loss_reduction')}loss_reduction must be mean or sum")

    model = doc.get("model", {})
    _check_keys(model, {"vision": dict, "language": dict, "connector": dict}, "model", lines)
    vision = _dataclass_section(VisionConfig, model.get("vision", {}), "model.vision", lines)
    language = _dataclass_section(LmConfig, model.get("language", {}), "model.language", lines)
    conn = model.get("connector", {})
    _check_keys(conn, CONNECTOR_KEYS, "model.connector", lines)
    cfg.model = ModelConfig(vision, language, conn.get("hidden"))
    if language.vocab_size < D.VOCAB_SIZE:
        raise ConfigError(f"{lines.of('model.language', 'vocab_size')}vocab_size must be >= {D.VOCAB_SIZE}")

    ev = doc.get("eval", {})
    _check_keys(ev, EVAL_KEYS, "eval", lines)
    cfg.eval_per_family = ev.get("per_family", cfg.eval_per_family)
    cfg.eval_families = tuple(ev.get("families", cfg.eval_families))
    bad = set(cfg.eval_families) - set(D.EVAL_FAMILIES)
    if bad:
        raise ConfigError(f"{lines.of('eval', 'families')}unknown eval families {sorted(bad)}")
    cfg.eval_seeds = tuple(ev.get("seeds", cfg.eval_seeds))

    mixtures = P.desk_mixtures(cfg.seed, cfg.data_scale)
    mix_doc = doc.get("mixtures", {})
    for i, (name, table) in enumerate(mix_doc.items()):
        if not isinstance(table, dict):
            raise ConfigError(f"{lines.of('mixtures', name)}mixtures.{name} must be a section")
        mixtures[name] = _mixture(name, table, cfg.seed, 100 + i, cfg.data_scale, lines)
    cfg.mixtures = mixtures

    if "stages" in doc:
        stages = tuple(_stage(i, t, lines) for i, t in enumerate(doc["stages"]))
        cfg.regime = P.Regime(run.get("regime", "custom"), stages)
    else:
        rid = run.get("regime", "sailvit_3stage")
        catalog = P.builtin_regimes()
        if rid not in catalog:
            raise ConfigError(f"{lines.of('run', 'regime')}unknown regime {rid!r}; choose from {sorted(catalog)}")
        cfg.regime = P.desk_regime(catalog[rid], cfg.divisor, cfg.lr_scale)
    for plan in cfg.regime.stages:
        if plan.mixture not in mixtures:
            raise ConfigError(f"stage {plan.name!r} refers to missing mixture section [mixtures.{plan.mixture}]")
        entry = mixtures[plan.mixture]
        if isinstance(entry, tuple):
            for member in entry:
                if member not in mixtures:
                    raise ConfigError(f"union [mixtures.{plan.mixture}] refers to missing section [mixtures.{member}]")

    env = os.environ.get("GFR_OUT")
    cfg.out_dir = out_override or env or cfg.out_dir
    cfg.source_hash = hashlib.sha256(text.encode()).hexdigest()
    return cfg


def load_config(path, out_override: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, out_override)
