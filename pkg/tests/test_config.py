from pathlib import Path

import pytest

from gfr import data as D
from gfr.config import load_config, parse_config
from gfr.errors import ConfigError

ROOT = Path(__file__).resolve().parents[1]


def test_bundled_configs_parse():
    for name in ("desk.toml", "smoke.toml"):
        run = load_config(ROOT / "configs" / name)
        assert run.regime.regime_id == "sailvit_3stage"
        assert len(run.source_hash) == 64


def test_desk_config_batches():
    run = load_config(ROOT / "configs" / "desk.toml")
    assert [s.effective_batch for s in run.regime.stages] == [15, 4, 4]


def test_defaults_from_empty_file():
    run = parse_config("")
    assert run.seed == 0 and run.precision == "float64" and run.loss_reduction == "mean"
    assert run.eval_families == D.EVAL_FAMILIES


def test_unknown_key_reports_line():
    text = "[run]\nseed = 1\n\n[model.vision]\npatch_size = 4\nbogus = 3\n"
    with pytest.raises(ConfigError, match=r"line 6: unknown key 'bogus' in \[model.vision\]"):
        parse_config(text)


def test_unknown_section_reports_line():
    with pytest.raises(ConfigError, match=r"line 3: unknown section \[extra\]"):
        parse_config("[run]\nseed = 1\n[extra]\nx = 1\n")


def test_type_error_reports_line():
    with pytest.raises(ConfigError, match=r"line 2: \[run\] seed should be int"):
        parse_config('[run]\nseed = "zero"\n')


def test_invalid_toml():
    with pytest.raises(ConfigError, match="invalid TOML"):
        parse_config("[run\nseed = 1")


@pytest.mark.parametrize(
    "text,pattern",
    [
        ('[run]\nprecision = "float16"\n', "precision"),
        ('[run]\nloss_reduction = "max"\n', "loss_reduction"),
        ('[run]\nregime = "nope"\n', "unknown regime"),
        ("[model.language]\nvocab_size = 100\n", "vocab_size"),
        ("[model.vision]\nbase_resolution = 30\n", r"line 1: \[model.vision\]"),
        ('[eval]\nfamilies = ["mix"]\n', "unknown eval families"),
    ],
)
def test_invalid_values(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(text)


STAGES = """
[mixtures.tiny]
components = {caption = 1, ocr = 1}
total = 40

[[stages]]
name = "only"
groups = ["connector"]
lr = 0.01
batch = 4
mixture = "%s"
"""


def test_inline_stages():
    run = parse_config(STAGES % "tiny")
    assert run.regime.regime_id == "custom"
    (plan,) = run.regime.stages
    assert plan.trainable_groups == ("connector",) and plan.effective_batch == 4
    assert run.mixtures["tiny"].total_samples == 40


def test_missing_mixture_named():
    with pytest.raises(ConfigError, match=r"stage 'only' refers to missing mixture section \[mixtures.ghost\]"):
        parse_config(STAGES % "ghost")


def test_union_mixture_members_checked():
    text = (STAGES % "both") + '\n[mixtures.both]\nunion = ["tiny", "absent"]\n'
    with pytest.raises(ConfigError, match=r"\[mixtures.absent\]"):
        parse_config(text)


def test_stage_missing_fields():
    with pytest.raises(ConfigError, match="stage #1 is missing"):
        parse_config('[[stages]]\nname = "x"\n')


def test_mixture_seed_offsets_and_reseed():
    run = parse_config("[run]\nseed = 2\n" + STAGES % "tiny")
    assert run.mixtures["tiny"].seed == 2 * 1000 + 100
    again = run.with_seed(5)
    assert again.mixtures["tiny"].seed == 5 * 1000 + 100 and again.seed == 5
    assert run.mixtures["tiny"].seed == 2100


def test_data_scale_applies_to_config_mixtures():
    run = parse_config("[run]\ndata_scale = 0.5\n" + STAGES % "tiny")
    assert run.mixtures["tiny"].total_samples == 20


def test_out_dir_precedence(monkeypatch):
    text = '[run]\nout_dir = "from_file"\n'
    monkeypatch.delenv("GFR_OUT", raising=False)
    assert parse_config(text).out_dir == "from_file"
    monkeypatch.setenv("GFR_OUT", "from_env")
    assert parse_config(text).out_dir == "from_env"
    assert parse_config(text, "from_flag").out_dir == "from_flag"


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "nope.toml")
