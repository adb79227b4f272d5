import numpy as np
import pytest

from gfr import model as M
from gfr.decoder import LmConfig
from gfr.errors import ConfigError, StateError
from gfr.vision import VisionConfig

CFG = M.ModelConfig(
    VisionConfig(base_resolution=32, patch_size=4, embed_dim=8, depth=1, heads=2),
    LmConfig(vocab_size=32, model_dim=8, depth=1, heads=2, max_seq_len=64),
)


@pytest.fixture(scope="module")
def params():
    return M.init_params(CFG, 0)


def _img(seed, h=32, w=32):
    return np.random.default_rng(seed).random((h, w, 3))


def test_assemble_single_image_length(params):
    seq = M.assemble(M.Sample([_img(0)], [1, 2, 3, 4, 5], 2), CFG, params)
    assert len(seq) == 21 and seq.n_visual == 16
    assert seq.is_visual[:16].all() and not seq.is_visual[16:].any()
    assert seq.loss_mask.tolist() == [False] * 18 + [True] * 3


def test_assemble_video_frames_in_order(params):
    frames = [_img(i) for i in range(3)]
    seq = M.assemble(M.Sample(frames, [1, 2], 0), CFG, params)
    assert seq.n_visual == 48
    first = M.assemble(M.Sample(frames[:1], [1, 2], 0), CFG, params)
    assert np.allclose(seq.visual_block.data[:16], first.visual_block.data, rtol=0, atol=1e-14)


def test_assemble_text_only(params):
    seq = M.assemble(M.Sample([], [3, 4, 5], 1), CFG, params)
    assert len(seq) == 3 and seq.n_visual == 0


def test_sample_supervised_from_bounds():
    with pytest.raises(ConfigError):
        M.Sample([], [1, 2], 2)


def test_batch_of_identical_samples_equals_single(params):
    s = M.Sample([_img(1)], [1, 2, 3], 1)
    single = M.batch_loss([s], CFG, params).item()
    assert M.batch_loss([s, s, s], CFG, params).item() == pytest.approx(single, abs=1e-12)


def test_batch_loss_is_mean_over_samples(params):
    a = M.Sample([_img(2)], [1, 2, 3], 1)
    b = M.Sample([], [4, 5, 6, 7], 2)
    la = M.batch_loss([a], CFG, params).item()
    lb = M.batch_loss([b], CFG, params).item()
    assert M.batch_loss([a, b], CFG, params).item() == pytest.approx((la + lb) / 2, abs=1e-12)


def test_text_only_gives_zero_vision_gradient():
    p = M.init_params(CFG, 1)
    M.batch_loss([M.Sample([], [1, 2, 3], 1)], CFG, p).backward()
    grads = p.trainable_grads()
    assert all(not grads[n].any() for n in p.names("vision") + p.names("connector"))
    assert any(grads[n].any() for n in p.names("language"))


def test_image_sample_reaches_every_group():
    p = M.init_params(CFG, 2)
    M.batch_loss([M.Sample([_img(3)], [1, 2, 3], 0)], CFG, p).backward()
    grads = p.trainable_grads()
    for g in ("vision", "connector", "language"):
        assert any(np.abs(grads[n]).sum() > 0 for n in p.names(g))


@pytest.mark.parametrize(
    "groups", [("connector",), ("vision", "connector"), ("vision", "connector", "language"), ("language",)]
)
def test_trainable_grads_follow_stage_mask(groups):
    p = M.init_params(CFG, 3)
    p.set_trainable(groups)
    M.batch_loss([M.Sample([_img(4)], [1, 2, 3], 0)], CFG, p).backward()
    grads = M.trainable_grads(p)
    assert set(grads) == {n for n in p if p.group_of(n) in groups}
    frozen = [n for n in p if p.group_of(n) not in groups]
    assert all(p[n].grad is None for n in frozen)


def test_trainable_grads_before_backward():
    p = M.init_params(CFG, 4)
    with pytest.raises(StateError):
        M.trainable_grads(p)


def test_init_params_seed_split():
    a = M.init_params(CFG, 0, language_seed=9)
    b = M.init_params(CFG, 0)
    assert np.array_equal(a["connector.w1"].data, b["connector.w1"].data)
    assert not np.array_equal(a["language.tok"].data, b["language.tok"].data)


def test_wide_image_uses_two_tiles(params):
    seq = M.assemble(M.Sample([_img(5, 32, 64)], [1, 2], 0), CFG, params)
    assert seq.n_visual == 32
