"""Property suites behind the ``verify`` verb."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from . import checkpoint as C
from . import data as D
from . import model as M
from . import pipeline as P
from . import tensor as T
from .decoder import LmConfig
from .errors import GfrError
from .vision import PatchGrid, TileLayout, VisionConfig, pixel_shuffle, select_tile_grid

GOLDEN = Path(__file__).parent / "fixtures" / "golden_desk.gfr"
GOLDEN_SHA = Path(__file__).parent / "fixtures" / "golden_desk.sha256"
GRAD_TOL = 1e-4


def _t(rng, *shape):
    return T.Tensor(rng.normal(size=shape), requires_grad=True)


def _weighted(y, rng):
    """Scalar readout sum(y * w) with fixed random weights."""
    w = T.as_tensor(rng.normal(size=y.shape))
    return T.sum_(y * w)


def gradcheck_cases() -> dict:
    """One closure per registered op: name -> (fn, inputs)."""
    rng = np.random.default_rng(7)
    cases = {}

    def case(name, inputs, body):
        seed = len(cases)
        cases[name] = (lambda: _weighted(body(), np.random.default_rng(seed)), inputs)

    a, b = _t(rng, 3, 4), _t(rng, 4)
    case("add", [a, b], lambda: a + b)
    a2, b2 = _t(rng, 3, 4), _t(rng, 3, 1)
    case("sub", [a2, b2], lambda: a2 - b2)
    a3, b3 = _t(rng, 2, 3), _t(rng, 2, 3)
    case("mul", [a3, b3], lambda: a3 * b3)
    a4 = _t(rng, 5)
    case("neg", [a4], lambda: -a4)
    a5 = _t(rng, 2, 5)
    case("gelu", [a5], lambda: T.gelu(a5))
    m1, m2 = _t(rng, 2, 3, 4), _t(rng, 4, 2)
    case("matmul", [m1, m2], lambda: m1 @ m2)
    r1 = _t(rng, 2, 6)
    case("reshape", [r1], lambda: r1.reshape(3, 4))
    t1 = _t(rng, 2, 3, 4)
    case("transpose", [t1], lambda: t1.transpose(2, 0, 1))
    c1, c2 = _t(rng, 2, 3), _t(rng, 1, 3)
    case("concat", [c1, c2], lambda: T.concat([c1, c2], axis=0))
    s1 = _t(rng, 3, 5)
    case("split", [s1], lambda: T.split(s1, [2, 3], axis=1)[1])
    g1 = _t(rng, 4, 3)
    idx = np.array([0, 2, 2, -1, 3])
    case("gather_rows", [g1], lambda: T.gather_rows(g1, idx))
    su = _t(rng, 3, 4)
    case("sum", [su], lambda: T.sum_(su, axis=1))
    me = _t(rng, 3, 4)
    case("mean", [me], lambda: T.mean(me, axis=0))
    lx, lg, lb = _t(rng, 3, 6), _t(rng, 6), _t(rng, 6)
    case("layernorm", [lx, lg, lb], lambda: T.layernorm(lx, lg, lb, 1e-5))
    q, k, v = _t(rng, 2, 4, 3), _t(rng, 2, 4, 3), _t(rng, 2, 4, 3)
    case("attention", [q, k, v], lambda: T.attention(q, k, v, causal=True))
    logits = _t(rng, 4, 5)
    tg = np.array([1, 0, 4, 2])
    mk = np.array([True, False, True, True])
    cases["softmax_ce_masked"] = (lambda: T.softmax_ce_masked(logits, tg, mk), [logits])
    return cases


def suite_gradcheck(out) -> bool:
    cases = gradcheck_cases()
    missing = sorted(set(T.OPS) - set(cases))
    ok = not missing
    for name, (fn, inputs) in cases.items():
        err = T.gradcheck(fn, inputs)
        good = err < GRAD_TOL
        ok &= good
        if not good:
            out(f"  gradcheck {name}: rel err {err:.2e} FAIL")
    out(f"  gradcheck coverage {len(cases)}/{len(T.OPS)} ops" + (f" (missing {missing})" if missing else ""))
    return ok


def naive_shuffle(grid: np.ndarray) -> np.ndarray:
    """Loop reference: grid ``[rows, cols, d]`` -> ``[rows/2 * cols/2, 4d]``."""
    rows, cols, d = grid.shape
    out = np.zeros((rows // 2 * (cols // 2), 4 * d))
    for i in range(rows // 2):
        for j in range(cols // 2):
            for q, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
                for ch in range(d):
                    out[i * (cols // 2) + j, q * d + ch] = grid[2 * i + di, 2 * j + dj, ch]
    return out


def suite_pixel_shuffle(out, trials=50) -> bool:
    rng = np.random.default_rng(11)
    for _ in range(trials):
        r, c, d = (int(x) for x in rng.integers(1, 5, size=3) * np.array([2, 2, 1]))
        grid = rng.normal(size=(r, c, d))
        got = pixel_shuffle(PatchGrid(r, c, T.as_tensor(grid.reshape(r * c, d)))).data
        if not np.array_equal(got, naive_shuffle(grid)):
            out(f"  pixel shuffle mismatch on {r}x{c}x{d}")
            return False
    return True


def exhaustive_grid(w, h, base, max_tiles) -> TileLayout:
    """Float log-aspect scan over all grids; ties to fewer tiles then fewer rows."""
    if w <= base and h <= base:
        return TileLayout(1, 1)
    best = None
    for r in range(1, max_tiles + 1):
        for c in range(1, max_tiles + 1):
            if r * c > max_tiles:
                continue
            key = (round(abs(np.log((c / r) / (w / h))), 12), r * c, r)
            if best is None or key < best[0]:
                best = (key, r, c)
    return TileLayout(best[1], best[2])


def suite_tiling(out, trials=100) -> bool:
    rng = np.random.default_rng(5)
    for _ in range(trials):
        mt = int(rng.integers(1, 9))
        w, h = (int(x) for x in rng.integers(1, 4000, size=2))
        cfg = VisionConfig(base_resolution=448, patch_size=14, max_tiles=mt)
        got = select_tile_grid(w, h, cfg)
        want = exhaustive_grid(w, h, 448, mt)
        if (got.grid_rows, got.grid_cols) != (want.grid_rows, want.grid_cols) or got.tile_count > mt:
            out(f"  tiling mismatch for {w}x{h}, max {mt}")
            return False
    return True


def tiny_config() -> M.ModelConfig:
    return M.ModelConfig(
        VisionConfig(base_resolution=16, patch_size=4, embed_dim=8, depth=1, heads=2),
        LmConfig(vocab_size=D.VOCAB_SIZE, model_dim=8, depth=1, heads=2, max_seq_len=64),
    )


def golden_run(seed: int = 0):
    """Tiny deterministic three-stage run; returns (params, reports, sink)."""
    cfg = tiny_config()
    params = M.init_params(cfg, seed)
    regime = P.desk_regime(P.builtin_regimes()["sailvit_3stage"], divisor=512, lr_scale=100)
    mix = P.desk_mixtures(seed, scale=0.002)
    sink = P.ListSink()
    reports = []
    for i, plan in enumerate(regime.stages):
        stream = P.resolve_stream(plan.mixture, mix)
        reports.append(P.run_stage(plan, params, stream, cfg, sink, "golden", seed=i))
    return params, reports, sink


def suite_freeze(out) -> bool:
    try:
        _, reports, _ = golden_run()
    except GfrError as e:
        out(f"  freeze isolation: {e}")
        return False
    return all(r.frozen_isolated for r in reports)


def golden_bytes(seed: int = 0) -> bytes:
    params, _, _ = golden_run(seed)
    return C.dumps(C.Checkpoint(params, {"regime_id": "golden", "stage_index": 2}))


def suite_checkpoint(out, golden: Path | None = None, golden_sha: Path | None = None) -> bool:
    golden = Path(golden) if golden else GOLDEN
    golden_sha = Path(golden_sha) if golden_sha else golden.with_suffix(".sha256")
    try:
        data = golden.read_bytes()
        want = golden_sha.read_text().split()[0]
    except OSError as e:
        out(f"  golden fixture unreadable: {e}")
        return False
    if hashlib.sha256(data).hexdigest() != want:
        out("  golden fixture sha256 mismatch")
        return False
    try:
        ck = C.loads(data)
    except GfrError as e:
        out(f"  golden fixture failed to load: {e}")
        return False
    if C.dumps(ck) != data:
        out("  golden fixture does not re-serialize byte-identically")
        return False
    return True


def run_verify(out=print, golden=None) -> bool:
    suites = [
        ("gradcheck", lambda: suite_gradcheck(out)),
        ("pixel_shuffle_oracle", lambda: suite_pixel_shuffle(out)),
        ("tiling_oracle", lambda: suite_tiling(out)),
        ("freeze_isolation", lambda: suite_freeze(out)),
        ("checkpoint_roundtrip", lambda: suite_checkpoint(out, golden)),
    ]
    ok = True
    for name, fn in suites:
        passed = bool(fn())
        ok &= passed
        out(f"{name}: {'PASS' if passed else 'FAIL'}")
    return ok
