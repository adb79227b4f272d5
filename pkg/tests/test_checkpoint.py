import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfr import checkpoint as C
from gfr import model as M
from gfr.errors import CorruptionError, FormatError
from gfr.optim import AdamWState
from gfr.params import ParameterStore, bitwise_equal
from gfr.verify import GOLDEN, GOLDEN_SHA, suite_checkpoint, tiny_config


def _ckpt(seed=0, with_opt=True):
    p = M.init_params(tiny_config(), seed)
    p.set_trainable(("connector",))
    opt = None
    if with_opt:
        opt = AdamWState(lr=1e-3, weight_decay=0.1, t=3)
        opt.m = {"connector.b1": np.arange(8.0)}
        opt.v = {"connector.b1": np.arange(8.0) ** 2}
    rng = np.random.default_rng(seed)
    return C.Checkpoint(p, {"regime_id": "r", "stage_index": 1, "stage": "s", "step": 7}, C.rng_to_json(rng), opt)


def test_roundtrip_bitwise():
    ck = _ckpt()
    data = C.dumps(ck)
    back = C.loads(data)
    assert bitwise_equal(ck.params.snapshot(), back.params.snapshot())
    assert back.cursor == ck.cursor
    assert back.params.trainable_names() == ck.params.trainable_names()
    assert [back.params.group_of(n) for n in back.params] == [ck.params.group_of(n) for n in ck.params]
    assert back.optimizer.t == 3 and back.optimizer.weight_decay == 0.1
    assert np.array_equal(back.optimizer.v["connector.b1"], np.arange(8.0) ** 2)
    assert C.dumps(back) == data


def test_rng_state_restores_stream():
    ck = _ckpt(4)
    back = C.loads(C.dumps(ck))
    a = C.rng_from_json(ck.rng_state).random(5)
    b = C.rng_from_json(back.rng_state).random(5)
    assert np.array_equal(a, b)


def test_header_layout():
    data = C.dumps(_ckpt(with_opt=False))
    assert data[:4] == b"GFR1"
    version, count = struct.unpack("<II", data[4:12])
    assert version == 1 and count == len(_ckpt().params)


def test_float32_preserved():
    p = ParameterStore()
    p.add("vision.x", np.arange(3, dtype=np.float32), "vision")
    p["vision.x"].data = np.arange(3, dtype=np.float32)
    back = C.loads(C.dumps(C.Checkpoint(p)))
    assert back.params["vision.x"].data.dtype == np.float32


def test_bad_magic():
    with pytest.raises(FormatError):
        C.loads(b"NOPE" + C.dumps(_ckpt())[4:])


def test_bad_version():
    data = bytearray(C.dumps(_ckpt()))
    data[4:8] = struct.pack("<I", 9)
    with pytest.raises(FormatError):
        C.loads(bytes(data))


def test_trailing_bytes():
    with pytest.raises(CorruptionError):
        C.loads(C.dumps(_ckpt()) + b"\0")


@settings(max_examples=30)
@given(st.floats(0.0, 0.999))
def test_truncation_always_detected(frac):
    data = C.dumps(_ckpt())
    cut = max(4, int(len(data) * frac))
    with pytest.raises((CorruptionError, FormatError)):
        C.loads(data[:cut])


def test_save_is_atomic_and_returns_sha(tmp_path):
    path = tmp_path / "a.gfr"
    sha = C.save_checkpoint(path, _ckpt())
    assert sha == hashlib.sha256(path.read_bytes()).hexdigest()
    assert not (tmp_path / "a.gfr.tmp").exists()
    assert bitwise_equal(C.load_checkpoint(path).params.snapshot(), _ckpt().params.snapshot())


def test_golden_fixture_passes(capsys):
    assert suite_checkpoint(print)
    assert GOLDEN.exists() and GOLDEN_SHA.exists()


def test_golden_fixture_corruption_detected(tmp_path):
    bad = tmp_path / "g.gfr"
    data = bytearray(GOLDEN.read_bytes())
    data[100] ^= 1
    bad.write_bytes(bytes(data))
    (tmp_path / "g.sha256").write_text(GOLDEN_SHA.read_text())
    msgs = []
    assert not suite_checkpoint(msgs.append, bad)
    assert any("sha256" in m for m in msgs)
