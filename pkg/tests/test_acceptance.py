"""Acceptance criteria 1-10.

Each test appends one pass/fail line to ``RESULTS``; conftest prints them in
the terminal summary.  Criteria 5-9 share one full desk run per seed, built
lazily and cached for the session (about 40 minutes on one core).
"""

import time

import numpy as np
import pytest

from gfr import checkpoint as C
from gfr import data as D
from gfr import decoder
from gfr import evaluate as E
from gfr import experiments as X
from gfr import model as M
from gfr import optim as O
from gfr import pipeline as P
from gfr import tensor as T
from gfr.cli import main as cli_main
from gfr.decoder import LmConfig
from gfr.params import bitwise_equal
from gfr.verify import exhaustive_grid, naive_shuffle, tiny_config
from gfr.vision import PatchGrid, VisionConfig, pixel_shuffle, select_tile_grid

RESULTS = {}
SEEDS = (0, 1, 2)
SIZES = (2000, 8000, 16000, 32000)
SETUP = X.DeskSetup()


def record(n, ok, detail):
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])
    return ok


# ---------------------------------------------------------------------------
# shared desk runs


class DeskRun:
    def __init__(self, seed):
        t = time.perf_counter()
        self.seed = seed
        self.lm = X.base_language(SETUP, seed)
        self.initial = X.initial_params(SETUP, seed, self.lm)
        self.params = self.initial.copy()
        self.sink = P.ListSink()
        res = P.run_regime(SETUP.regime("sailvit_3stage"), self.params, SETUP.cfg, SETUP.mixtures(seed), self.sink, seed=seed)
        self.reports = res.reports
        self.suite = SETUP.suite(seed)
        self.seconds = time.perf_counter() - t
        self._cache = {}

    def regime_score(self, regime_id, trained=True):
        key = (regime_id, trained)
        if key not in self._cache:
            t = time.perf_counter()
            backbone = self.params if trained else None
            self._cache[key] = X.eval_regime_score(SETUP, self.seed, backbone, regime_id, self.suite, language=self.lm)
            self.seconds += time.perf_counter() - t
        return self._cache[key]


_RUNS = {}


@pytest.fixture(scope="session")
def desk():
    def get(seed):
        if seed not in _RUNS:
            _RUNS[seed] = DeskRun(seed)
        return _RUNS[seed]

    return get


# ---------------------------------------------------------------------------
# 1. gradient correctness


def test_c1_gradients_match_central_differences():
    t = time.perf_counter()
    cfg = M.ModelConfig(
        VisionConfig(base_resolution=8, patch_size=4, embed_dim=4, depth=1, heads=2),
        LmConfig(vocab_size=12, model_dim=4, depth=1, heads=2, max_seq_len=8),
    )
    params = M.init_params(cfg, 0)
    n_params = params.num_scalars()
    assert n_params <= 2000
    rng = np.random.default_rng(0)
    samples = [M.Sample([rng.random((8, 16, 3))], [3, 7, 9], 1), M.Sample([], [1, 4, 5, 11, 2], 2)]
    params.set_trainable(("vision", "connector", "language"))
    err = T.gradcheck(lambda: M.batch_loss(samples, cfg, params), [params[n] for n in params], eps=1e-5)
    elapsed = time.perf_counter() - t
    ok = err < 1e-4 and elapsed < 120
    record(1, ok, f"{n_params} params, max rel err {err:.2e} (< 1e-4), {elapsed:.1f}s (< 120s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. masking


def test_c2_loss_masking():
    t = time.perf_counter()
    cfg = tiny_config()
    params = M.init_params(cfg, 1)
    rng = np.random.default_rng(2)
    samples = [M.Sample([rng.random((16, 16, 3))], [4, 24, 33, 3], 2), M.Sample([], [8, 100, 101, 102, 3], 3)]
    logits, seqs = M.batch_logits(samples, cfg, params)
    B, L, V = logits.shape
    targets, mask, weights = decoder.loss_rows(seqs, L)
    flat = logits.data.reshape(B * L, V)
    base = T.softmax_ce_masked(T.Tensor(flat), targets, mask, row_weights=weights).item()
    changes = []
    for _ in range(20):
        noisy = flat.copy()
        noisy[~mask] += rng.normal(size=((~mask).sum(), V)) * 10
        changes.append(T.softmax_ce_masked(T.Tensor(noisy), targets, mask, row_weights=weights).item() - base)
    # the same perturbation on a masked row does move the loss
    moved = flat.copy()
    moved[np.flatnonzero(mask)[0]] += rng.normal(size=V)
    sensitive = T.softmax_ce_masked(T.Tensor(moved), targets, mask, row_weights=weights).item() != base

    text_only = [M.Sample([], [8, 100, 101, 102, 3], 2), M.Sample([], [9, 40, 41, 3], 2)]
    params.zero_grad()
    M.batch_loss(text_only, cfg, params).backward()
    vis = [params[n].grad for n in params.names("vision")]
    vision_zero = all(g is None or not g.any() for g in vis)
    elapsed = time.perf_counter() - t
    ok = all(c == 0.0 for c in changes) and sensitive and vision_zero
    record(2, ok, f"unmasked-row perturbations change loss by {max(abs(c) for c in changes):g}; text-only vision grads zero: {vision_zero}; {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. token arithmetic


def test_c3_token_counts():
    paper = VisionConfig(base_resolution=448, patch_size=14)
    counts = (paper.tokens_per_tile, paper.shuffled_tokens_per_tile)
    pg = PatchGrid(32, 32, T.Tensor(np.zeros((1024, 1))))
    shuffled = pixel_shuffle(pg).shape[0]
    bad = []
    for r in range(2, 33, 2):
        for c in range(2, 33, 2):
            out = pixel_shuffle(PatchGrid(r, c, T.Tensor(np.zeros((r * c, 1))))).shape[0]
            if 4 * out != r * c:
                bad.append((r, c))
    ok = counts == (1024, 256) and shuffled == 256 and not bad
    record(3, ok, f"448/14 -> {counts[0]} tokens -> {shuffled} after shuffle; 256 even grids up to 32x32 all 4:1")
    assert ok


# ---------------------------------------------------------------------------
# 4. shuffle and tiling oracles


def test_c4_shuffle_and_tiling_oracles():
    rng = np.random.default_rng(4)
    shuffle_bad = 0
    for _ in range(200):
        r, c = (int(x) * 2 for x in rng.integers(1, 9, size=2))
        d = int(rng.integers(1, 5))
        grid = rng.normal(size=(r, c, d))
        got = pixel_shuffle(PatchGrid(r, c, T.Tensor(grid.reshape(r * c, d)))).data
        shuffle_bad += not np.array_equal(got, naive_shuffle(grid))
    tiling_bad, over = 0, 0
    for _ in range(500):
        w, h = (int(x) for x in rng.integers(1, 6000, size=2))
        mt = int(rng.integers(1, 9))
        got = select_tile_grid(w, h, VisionConfig(base_resolution=448, patch_size=14, max_tiles=mt))
        tiling_bad += got != exhaustive_grid(w, h, 448, mt)
        over += got.tile_count > min(mt, 8)
    ok = shuffle_bad == 0 and tiling_bad == 0 and over == 0
    record(4, ok, f"shuffle mismatches {shuffle_bad}/200; tiling mismatches {tiling_bad}/500; over-limit {over}")
    assert ok


# ---------------------------------------------------------------------------
# 5. freeze isolation


@pytest.mark.slow
def test_c5_freeze_isolation(desk):
    details = []
    ok = True
    for seed in SEEDS:
        run = desk(seed)
        s1, s2, s3 = (c.params for c in run.sink.checkpoints)
        a = bitwise_equal(run.initial.snapshot("vision"), s1.snapshot("vision"))
        b = bitwise_equal(run.initial.snapshot("language"), s1.snapshot("language"))
        c = bitwise_equal(s1.snapshot("language"), s2.snapshot("language"))
        moved = not bitwise_equal(s1.snapshot("connector"), run.initial.snapshot("connector"))
        moved &= not bitwise_equal(s1.snapshot("vision"), s2.snapshot("vision"))
        moved &= not bitwise_equal(s2.snapshot("language"), s3.snapshot("language"))
        flags = all(r.frozen_isolated for r in run.reports)
        ok &= a and b and c and moved and flags
        details.append(f"seed {seed}: {'ok' if a and b and c and moved and flags else 'VIOLATED'}")
    record(5, ok, "; ".join(details))
    assert ok


# ---------------------------------------------------------------------------
# 6. trained vs random backbone under the two-stage eval regime


@pytest.mark.slow
def test_c6_trained_backbone_beats_random(desk):
    trained = [desk(s).regime_score("eval_2stage", True) for s in SEEDS]
    random = [desk(s).regime_score("eval_2stage", False) for s in SEEDS]
    avg_t = X.mean(r.average for r in trained)
    avg_r = X.mean(r.average for r in random)
    vis_t = X.mean(r.average_over(D.VISION_FAMILIES) for r in trained)
    vis_r = X.mean(r.average_over(D.VISION_FAMILIES) for r in random)
    minutes = sum(desk(s).seconds for s in SEEDS) / 60
    ok = avg_t > avg_r and vis_t >= vis_r + 0.03 and minutes < 60
    record(
        6,
        ok,
        f"mean {avg_t:.4f} vs random {avg_r:.4f}; vision families {vis_t:.4f} vs {vis_r:.4f} "
        f"(gap {vis_t - vis_r:+.4f}, need +0.03); {minutes:.1f} min",
    )
    assert ok


# ---------------------------------------------------------------------------
# 7. scaling


@pytest.mark.slow
def test_c7_scaling_curve(desk):
    t = time.perf_counter()
    stage2 = {s: desk(s).sink.checkpoints[1].params for s in SEEDS}
    points = E.scaling_curve(SIZES, SEEDS, lambda seed, sizes: X.scaling_scores(SETUP, seed, sizes, shared=stage2[seed]))
    rho = E.spearman(points)
    gain = points[-1].mean - points[0].mean
    # stages 1-2 are shared with the desk runs; count their training time too
    minutes = (time.perf_counter() - t) / 60 + sum(desk(s).seconds for s in SEEDS) / 60
    means = ", ".join(f"{p.data_size}: {p.mean:.4f}" for p in points)
    ok = rho > 0 and gain >= 0.02 and minutes < 120
    record(7, ok, f"{means}; spearman {rho:+.3f}; gain {gain:+.4f} (need +0.02); {minutes:.1f} min")
    assert ok


# ---------------------------------------------------------------------------
# 8. inserted alignment stage


@pytest.mark.slow
def test_c8_three_stage_eval_regime(desk):
    two = X.mean(desk(s).regime_score("eval_2stage").average for s in SEEDS)
    three = X.mean(desk(s).regime_score("eval_3stage").average for s in SEEDS)
    ok = three >= two - 0.01
    record(8, ok, f"eval_3stage {three:.4f} vs eval_2stage {two:.4f} (delta {three - two:+.4f}, floor -0.01)")
    assert ok


# ---------------------------------------------------------------------------
# 9. linear probe


@pytest.mark.slow
def test_c9_probe(desk):
    probe = E.ProbeConfig()
    backbones = {s: desk(s).params for s in SEEDS}
    rows = X.probe_comparison(SETUP, SEEDS, probe, backbones=backbones)
    gap = X.mean(r.trained - r.random for r in rows)
    ok = probe.epochs == 10 and gap >= 0.05
    per = ", ".join(f"{r.trained:.3f}/{r.random:.3f}" for r in rows)
    record(9, ok, f"trained/random per seed {per}; mean gap {gap:+.4f} (need +0.05); {probe.epochs} epochs")
    assert ok


@pytest.mark.slow
def test_probe_two_class_separable(desk):
    # square vs cross at the largest size: separable by construction
    train = D.shape_classification(256, 0, classes=2, kinds=("square", "cross"), difficulty=0)
    test = D.shape_classification(256, 10_000, classes=2, kinds=("square", "cross"), difficulty=0)
    res = E.linear_probe(desk(0).params, SETUP.cfg.vision, E.ProbeConfig(classes=2), train, test)
    assert res.accuracy >= 0.9


# ---------------------------------------------------------------------------
# 10. engineering invariants


def test_c10_engineering_invariants(capsys):
    checks = {}
    cfg = tiny_config()

    # checkpoint round trip
    p = M.init_params(cfg, 3)
    opt = O.AdamWState(lr=1e-3, t=2, m={"connector.b1": np.ones(8)}, v={"connector.b1": np.ones(8)})
    blob = C.dumps(C.Checkpoint(p, {"regime_id": "x", "stage_index": 0}, None, opt))
    back = C.loads(blob)
    checks["checkpoint round trip"] = bitwise_equal(p.snapshot(), back.params.snapshot()) and C.dumps(back) == blob

    # resume equivalence through serialized bytes
    regime = P.desk_regime(P.builtin_regimes()["sailvit_3stage"], divisor=512, lr_scale=100)
    mix = P.desk_mixtures(0, scale=0.002)
    full_sink = P.ListSink()
    full = M.init_params(cfg, 0)
    P.run_regime(regime, full, cfg, mix, full_sink, seed=0)
    sink = P.ListSink()
    part = M.init_params(cfg, 0)
    first = P.run_regime(regime, part, cfg, mix, sink, seed=0, stop_after=0)
    ck = C.loads(C.dumps(first.checkpoint))
    P.run_regime(regime, ck.params, cfg, mix, sink, seed=0, start_stage=ck.cursor["stage_index"] + 1)
    checks["resume equivalence"] = sink.rows == full_sink.rows and bitwise_equal(ck.params.snapshot(), full.snapshot())

    # gradient accumulation
    rng = np.random.default_rng(5)
    samples = [M.Sample([rng.random((16, 16, 3))], rng.integers(0, 256, 5), 2) for _ in range(4)]
    a = M.init_params(cfg, 0)
    M.batch_loss(samples, cfg, a).backward()
    ga = a.trainable_grads()
    b = M.init_params(cfg, 0)
    acc = O.AccumulationState(micro_batch_size=2, accumulation_steps=2)
    sa, sb = O.AdamWState(lr=1e-3), O.AdamWState(lr=1e-3)
    seen = {}
    for i in (0, 2):
        b.zero_grad()
        M.batch_loss(samples[i : i + 2], cfg, b).backward()
        for n, g in b.trainable_grads().items():
            seen[n] = seen.get(n, 0) + g / 2
        O.accumulate_and_maybe_step(b, b.trainable_grads(), acc, sb)
    O.step(a, ga, sa)
    grad_err = max(float(np.max(np.abs(seen[n] - ga[n]))) for n in ga)
    param_err = max(float(np.max(np.abs(a[n].data - b[n].data))) for n in a)
    checks["accumulation within 1e-12"] = grad_err < 1e-12 and param_err < 1e-12

    # AdamW hand oracle: -1e-3 / (1 + 1e-8), 40-digit reference
    q = M.init_params(cfg, 0).subset(("connector",))
    before = q["connector.b2"].data.copy()
    O.step(q, {"connector.b2": np.ones_like(before)}, O.AdamWState(lr=1e-3))
    step = q["connector.b2"].data - before
    checks["adamw hand step"] = bool(np.all(np.abs(step - (-0.000999999990000000099999999)) < 1e-12))

    checks["verify exits zero"] = cli_main(["verify"]) == 0
    capsys.readouterr()
    ok = all(checks.values())
    record(10, ok, "; ".join(f"{k}: {'ok' if v else 'FAIL'}" for k, v in checks.items()) + f"; accum err {max(grad_err, param_err):.1e}")
    assert ok
