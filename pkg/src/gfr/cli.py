"""Command-line entry point: ``gfr <verb> [flags]``.

Exit codes: 0 success, 1 an ``--assert`` threshold failed or a verify suite
failed, 2 bad config or missing path, 3 non-finite loss.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import data as D
from . import evaluate as E
from . import experiments as X
from . import imageio
from . import kernels
from . import model as M
from . import pipeline as P
from . import plots
from . import tensor as T
from . import verify as V
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .errors import ConfigError, GfrError, NonFiniteError

TRAIN_COLUMNS = ("run_id", "stage", "step", "loss", "lr")
EVAL_COLUMNS = ("suite", "family", "seed", "accuracy")


class PathError(GfrError, FileNotFoundError):
    pass


class CsvSink:
    """Appends training rows to ``path`` and saves stage checkpoints next to it."""

    def __init__(self, path: Path, ckpt_dir: Path | None = None):
        self.path = path
        self.ckpt_dir = ckpt_dir
        self.rows = []
        self.saved = {}
        new = not path.exists()
        self._fh = open(path, "a", newline="")
        self._w = csv.writer(self._fh)
        if new:
            self._w.writerow(TRAIN_COLUMNS)

    def log(self, run_id, stage, step, loss, lr):
        row = (run_id, stage, step, repr(float(loss)), repr(float(lr)))
        self.rows.append(row)
        self._w.writerow(row)
        self._fh.flush()

    def checkpoint(self, ckpt: Checkpoint):
        if self.ckpt_dir is None:
            return
        c = ckpt.cursor
        path = self.ckpt_dir / f"{c['regime_id']}_stage{c['stage_index'] + 1}_{c['stage']}.gfr"
        self.saved[path.name] = save_checkpoint(path, ckpt)

    def close(self):
        self._fh.close()


def write_eval_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(EVAL_COLUMNS)
        for suite, family, seed, acc in rows:
            w.writerow((suite, family, seed, repr(float(acc))))


def eval_rows(suite_name: str, seed: int, res: E.EvalResult):
    rows = [(suite_name, fam, seed, acc) for fam, acc in res.per_family.items()]
    rows.append((suite_name, "average", seed, res.average))
    return rows


def write_manifest(out: Path, run: RunConfig, command: list, artifacts: dict, extra=None) -> None:
    path = out / "manifest.json"
    doc = json.loads(path.read_text()) if path.exists() else {}
    doc.update(
        {
            "version": __version__,
            "config_sha256": run.source_hash,
            "seed": run.seed,
            "regime": run.regime.regime_id,
            "precision": run.precision,
            "loss_reduction": run.loss_reduction,
            "kernel_backend": kernels.BACKEND,
            "command": command,
        }
    )
    doc.setdefault("artifacts", {}).update(artifacts)
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def setup_for(run: RunConfig) -> X.DeskSetup:
    return X.DeskSetup(
        cfg=run.model,
        divisor=run.divisor,
        lr_scale=run.lr_scale,
        data_scale=run.data_scale,
        eval_per_family=run.eval_per_family,
        reduction=run.loss_reduction,
        eval_families=run.eval_families,
        regimes=(run.regime,),
        mixture_fn=lambda seed: run.with_seed(seed).mixtures,
    )


def _out_dir(run: RunConfig) -> Path:
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seeds(arg, run: RunConfig):
    if arg is None:
        return list(run.eval_seeds)
    return list(range(arg))


def _load_params(pattern: str, seed: int):
    path = Path(pattern.format(seed=seed))
    if not path.is_file():
        raise PathError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# verbs


def _stage_index(selector: str, regime: P.Regime) -> int | None:
    if selector == "all":
        return None
    if selector.isdigit():
        i = int(selector) - 1
        if not 0 <= i < len(regime.stages):
            raise ConfigError(f"--stage {selector}: regime {regime.regime_id!r} has {len(regime.stages)} stages")
        return i
    return regime.stages.index(regime.stage(selector))


def cmd_train(args, run: RunConfig) -> int:
    out = _out_dir(run)
    setup = setup_for(run)
    regime = run.regime
    only = _stage_index(args.stage, regime)
    sink = CsvSink(out / "train_metrics.csv", out)
    try:
        if args.resume:
            ck = _load_params(args.resume, run.seed)
            if ck.cursor.get("regime_id") not in (None, regime.regime_id):
                raise ConfigError(f"checkpoint is from regime {ck.cursor['regime_id']!r}, config runs {regime.regime_id!r}")
            start = int(ck.cursor.get("stage_index", -1)) + 1
            if only is not None and only != start:
                raise ConfigError(f"checkpoint ends at stage {start}; it resumes stage {start + 1}, not {only + 1}")
            params = ck.params
        else:
            start = 0 if only is None else only
            if start > 0:
                raise ConfigError(f"--stage {args.stage} needs --resume with the stage-{start} checkpoint")
            if run.base_lm:
                lm = X.base_language(setup, run.seed, sink)
                params = X.initial_params(setup, run.seed, lm)
            else:
                params = M.init_params(run.model, run.seed)
        if start >= len(regime.stages):
            raise ConfigError("checkpoint already covers every stage of the regime")
        stop = None if only is None else only
        res = P.run_regime(regime, params, run.model, run.mixtures, sink, seed=run.seed, start_stage=start, stop_after=stop, reduction=run.loss_reduction)
    finally:
        sink.close()
    for r in res.reports:
        print(f"{r.name}: {r.steps} steps, mean loss {r.mean_loss:.4f}")
    series = {}
    for run_id, stage, step, loss, _ in sink.rows:
        series.setdefault(f"{run_id}/{stage}", []).append((step, float(loss)))
    if series:
        svg = plots.line_chart(series, f"{regime.regime_id} training loss", "step", "loss")
        (out / f"loss_{regime.regime_id}.svg").write_text(svg)
    write_manifest(out, run, args.command, sink.saved)
    return 0


def cmd_eval(args, run: RunConfig) -> int:
    out = _out_dir(run)
    setup = setup_for(run)
    rows, summary = [], []
    for seed in _seeds(args.seeds, run):
        suite = setup.suite(seed)
        ck = _load_params(args.checkpoint, seed) if args.checkpoint else None
        if args.regime is None:
            if ck is None:
                raise ConfigError("eval needs --checkpoint or --regime")
            res = E.evaluate((run.model, ck.params), suite, run.eval_families)
            rows += eval_rows("direct", seed, res)
            summary.append((seed, res, None))
            continue
        lm = X.base_language(setup, seed)
        trained = X.eval_regime_score(setup, seed, ck.params if ck else None, args.regime, suite, language=lm)
        label = "trained" if ck else "random"
        rows += eval_rows(f"{args.regime}/{label}", seed, trained)
        rnd = None
        if args.compare_random and ck is not None:
            rnd = X.eval_regime_score(setup, seed, None, args.regime, suite, language=lm)
            rows += eval_rows(f"{args.regime}/random", seed, rnd)
        summary.append((seed, trained, rnd))
    write_eval_csv(out / "eval.csv", rows)
    write_manifest(out, run, args.command, {}, {"eval_seeds": [s for s, _, _ in summary]})
    vision = [f for f in D.VISION_FAMILIES if f in run.eval_families]
    avg = X.mean(r.average for _, r, _ in summary)
    print(f"mean accuracy {avg:.4f} over {len(summary)} seed(s)")
    ok = True
    if args.assert_min is not None and avg < args.assert_min:
        print(f"ASSERT FAIL: mean accuracy {avg:.4f} < {args.assert_min}")
        ok = False
    if any(r is not None for _, _, r in summary):
        base = X.mean(r.average for _, _, r in summary)
        gap = X.mean(t.average_over(vision) - r.average_over(vision) for _, t, r in summary)
        print(f"random-backbone mean {base:.4f}; vision-family gap {gap:+.4f}")
        if args.assert_above_random and not avg > base:
            print("ASSERT FAIL: trained backbone does not beat random init")
            ok = False
        if args.assert_margin is not None and gap < args.assert_margin:
            print(f"ASSERT FAIL: vision-family gap {gap:+.4f} < {args.assert_margin}")
            ok = False
    return 0 if ok else 1


def cmd_probe(args, run: RunConfig) -> int:
    out = _out_dir(run)
    probe = E.ProbeConfig(classes=args.classes, epochs=args.epochs)
    rows, gaps = [], []
    for seed in _seeds(args.seeds, run):
        ck = _load_params(args.checkpoint, seed)
        train, test = X.probe_sets(seed, args.n_train, args.n_test, probe.classes)
        pc = E.ProbeConfig(probe.classes, probe.epochs, probe.lr, probe.hidden, probe.batch_size, seed)
        acc = E.linear_probe(ck.params, run.model.vision, pc, train, test).accuracy
        rows.append(("probe/trained", "shape", seed, acc))
        if args.compare_random:
            rnd = E.linear_probe(M.init_params(run.model, seed), run.model.vision, pc, train, test).accuracy
            rows.append(("probe/random", "shape", seed, rnd))
            gaps.append(acc - rnd)
            print(f"seed {seed}: trained {acc:.4f} random {rnd:.4f}")
        else:
            print(f"seed {seed}: trained {acc:.4f}")
    write_eval_csv(out / "probe.csv", rows)
    write_manifest(out, run, args.command, {}, {"probe_epochs": probe.epochs})
    if args.assert_margin is not None:
        if not gaps:
            raise ConfigError("--assert-margin needs --compare-random")
        gap = X.mean(gaps)
        if gap < args.assert_margin:
            print(f"ASSERT FAIL: probe gap {gap:+.4f} < {args.assert_margin}")
            return 1
    return 0


def cmd_scaling(args, run: RunConfig) -> int:
    out = _out_dir(run)
    setup = setup_for(run)
    sizes = sorted(int(s) for s in args.sizes.split(","))
    per_seed = {}
    for seed in _seeds(args.seeds, run):
        per_seed[seed] = X.scaling_scores(setup, seed, sizes)
        print(f"seed {seed}: " + ", ".join(f"{n}={per_seed[seed][n]:.4f}" for n in sizes))
    points = [E.CurvePoint(n, [per_seed[s][n] for s in per_seed]) for n in sizes]
    rows = [(f"scaling_{n}", "average", s, per_seed[s][n]) for n in sizes for s in per_seed]
    write_eval_csv(out / "scaling.csv", rows)
    with open(out / "curve.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("data_size", "mean_accuracy", "seeds"))
        for p in points:
            w.writerow((p.data_size, repr(p.mean), len(p.per_seed)))
    svg = plots.line_chart({"mean accuracy": [(p.data_size, p.mean) for p in points]}, "stage-3 data scaling", "samples", "accuracy", logx=True)
    (out / "scaling.svg").write_text(svg)
    rho = E.spearman(points)
    gain = points[-1].mean - points[0].mean
    print(f"spearman {rho:+.4f}; gain {gain:+.4f}")
    write_manifest(out, run, args.command, {}, {"scaling_sizes": sizes})
    ok = True
    if args.assert_positive and not rho > 0:
        print("ASSERT FAIL: spearman correlation is not positive")
        ok = False
    if args.assert_gain is not None and gain < args.assert_gain:
        print(f"ASSERT FAIL: gain {gain:+.4f} < {args.assert_gain}")
        ok = False
    return 0 if ok else 1


def cmd_ablate(args, run: RunConfig) -> int:
    out = _out_dir(run)
    setup = setup_for(run)
    results, langs = {}, {}

    def score(regime_id, seed):
        if seed not in langs:
            langs[seed] = X.base_language(setup, seed)
        params, _ = X.train_backbone(setup, seed, regime_id, language=langs[seed])
        res = E.evaluate((run.model, params), setup.suite(seed), run.eval_families)
        results[(regime_id, seed)] = res
        return res.average

    table = E.ab_compare(args.a, args.b, _seeds(args.seeds, run), score)
    rows = []
    for (rid, seed), res in results.items():
        rows += eval_rows(rid, seed, res)
    write_eval_csv(out / "ablation.csv", rows)
    text = table.format()
    (out / f"ablate_{args.a}_vs_{args.b}.csv").write_text(text + "\n")
    series = {args.a: [(r[0], r[1]) for r in table.rows], args.b: [(r[0], r[2]) for r in table.rows]}
    (out / f"ablate_{args.a}_vs_{args.b}.svg").write_text(plots.line_chart(series, f"{args.a} vs {args.b}", "seed", "mean accuracy"))
    print(text)
    write_manifest(out, run, args.command, {}, {"ablation": [args.a, args.b]})
    if args.assert_delta is not None and table.mean_delta < args.assert_delta:
        print(f"ASSERT FAIL: mean delta {table.mean_delta:+.4f} < {args.assert_delta}")
        return 1
    return 0


def cmd_verify(args) -> int:
    return 0 if V.run_verify(print, args.golden) else 1


def cmd_export(args, run: RunConfig | None) -> int:
    out = Path(args.out or Path(run.out_dir) / "fixtures")
    out.mkdir(parents=True, exist_ok=True)
    seed = run.seed if run else args.seed
    mixtures = run.mixtures if run else P.desk_mixtures(seed)
    stream = P.resolve_stream(args.mixture, mixtures)
    records = []
    for i in range(min(args.count, len(stream))):
        s = stream[i]
        files = []
        for j, img in enumerate(s.images):
            name = f"{i:05d}_{s.family}_{j}.ppm"
            imageio.write_ppm(out / name, img)
            files.append(name)
        records.append(
            {
                "index": i,
                "family": s.family,
                "images": files,
                "text_tokens": [int(t) for t in s.text_tokens],
                "supervised_from": int(s.supervised_from),
                "digest": D.sample_digest(s),
            }
        )
    manifest = {"version": __version__, "mixture": args.mixture, "seed": seed, "vocab_size": D.VOCAB_SIZE, "samples": records}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    print(f"wrote {len(records)} samples to {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gfr", description="Staged vision backbone refinement at desk scale.")
    sub = ap.add_subparsers(dest="verb", required=True)

    def with_config(p, required=True):
        p.add_argument("--config", required=required, help="TOML run config")
        p.add_argument("--out", help="output directory (overrides config and GFR_OUT)")

    p = sub.add_parser("train", help="run a regime or one stage of it")
    with_config(p)
    p.add_argument("--stage", default="all", help="'all', a 1-based stage number, or a stage name")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="score checkpoints on the held-out suite")
    with_config(p)
    p.add_argument("--checkpoint", help="checkpoint path; '{seed}' is replaced per seed")
    p.add_argument("--regime", help="evaluation regime to drop the backbone into")
    p.add_argument("--compare-random", action="store_true", help="also score a random-init backbone")
    p.add_argument("--seeds", type=int, help="use seeds 0..N-1 instead of the config's")
    p.add_argument("--assert-min", type=float)
    p.add_argument("--assert-above-random", action="store_true")
    p.add_argument("--assert-margin", type=float, help="minimum vision-family gap over random init")

    p = sub.add_parser("probe", help="frozen-backbone shape probe")
    with_config(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--n-train", type=int, default=512)
    p.add_argument("--n-test", type=int, default=512)
    p.add_argument("--compare-random", action="store_true")
    p.add_argument("--seeds", type=int)
    p.add_argument("--assert-margin", type=float)

    p = sub.add_parser("scaling", help="accuracy vs stage-3 data size")
    with_config(p)
    p.add_argument("--sizes", default="2000,8000,16000,32000")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--assert-positive", action="store_true", help="require positive Spearman correlation")
    p.add_argument("--assert-gain", type=float, help="minimum accuracy gain from smallest to largest size")

    p = sub.add_parser("ablate", help="paired A/B comparison of two regimes")
    with_config(p)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--assert-delta", type=float)

    p = sub.add_parser("verify", help="run the property suites")
    p.add_argument("--golden", help="golden checkpoint fixture to check instead of the bundled one")

    p = sub.add_parser("export-fixtures", help="write a mixture's samples as PPM files plus a token manifest")
    with_config(p, required=False)
    p.add_argument("--mixture", default="eval_sft")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.command = ["gfr", *(sys.argv[1:] if argv is None else argv)]
    try:
        if args.verb == "verify":
            return cmd_verify(args)
        run = load_config(args.config, args.out) if getattr(args, "config", None) else None
        if args.verb == "export-fixtures":
            return cmd_export(args, run)
        if run.precision == "float32":
            T.set_default_dtype(np.float32)
        return {"train": cmd_train, "eval": cmd_eval, "probe": cmd_probe, "scaling": cmd_scaling, "ablate": cmd_ablate}[args.verb](args, run)
    except PathError as e:
        print(f"path error: {e}", file=sys.stderr)
        return 2
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NonFiniteError as e:
        print(f"non-finite loss: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
