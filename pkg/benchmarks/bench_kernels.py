"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--train-steps 5]

Reports per-kernel timings at desk-model shapes, the max absolute
disagreement between backends, and the wall time of a few training steps.
"""

import argparse
import timeit

import numpy as np

from gfr import kernels
from gfr import model as M
from gfr import pipeline as P
from gfr.experiments import DeskSetup


def kernel_cases(rng):
    rows, width, vocab = 32 * 64, 32, 256
    x = rng.normal(size=(rows, width))
    att = rng.normal(size=(64 * 2 * 8, 64))
    p = kernels.softmax_rows(att)
    gamma, beta = rng.normal(size=width), rng.normal(size=width)
    y, xhat, rstd = kernels.layernorm_forward(x, gamma, beta, 1e-5)
    logits = rng.normal(size=(rows, vocab))
    targets = rng.integers(0, vocab, size=rows)
    weights = (rng.random(rows) < 0.3).astype(np.float64)
    idx = rng.integers(0, vocab, size=rows)
    return {
        "softmax_rows": lambda: kernels.softmax_rows(att, causal=True),
        "softmax_rows_backward": lambda: kernels.softmax_rows_backward(p, att),
        "layernorm_forward": lambda: kernels.layernorm_forward(x, gamma, beta, 1e-5),
        "layernorm_backward": lambda: kernels.layernorm_backward(x, xhat, rstd, gamma),
        "cross_entropy_rows": lambda: kernels.cross_entropy_rows(logits, targets, weights),
        "gelu_forward": lambda: kernels.gelu_forward(x),
        "gelu_backward": lambda: kernels.gelu_backward(x, x),
        "scatter_add_rows": lambda: kernels.scatter_add_rows(np.zeros((vocab, width)), idx, x),
    }


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(o) for o in out])
    return np.ravel(out)


def train_seconds(steps):
    setup = DeskSetup()
    plan = setup.regime("sailvit_3stage").stages[2]
    stream = P.resolve_stream(plan.mixture, setup.mixtures(0))
    params = M.init_params(setup.cfg, 0)
    sub = [stream[i] for i in range(steps * plan.effective_batch)]
    t = timeit.default_timer()
    P.run_stage(plan, params, sub, setup.cfg)
    return timeit.default_timer() - t


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--train-steps", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy backend is timed")
    timings, outputs = {}, {}
    for b in backends:
        with kernels.backend(b):
            cases = kernel_cases(np.random.default_rng(0))
            for name, fn in cases.items():
                outputs[(b, name)] = _flat(fn())
                timings[(b, name)] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
    print(f"{'kernel':24s}" + "".join(f"{b:>12s}" for b in backends) + ("   speedup   max |diff|" if len(backends) > 1 else ""))
    for name in kernel_cases(np.random.default_rng(0)):
        line = f"{name:24s}" + "".join(f"{timings[(b, name)] * 1e3:10.3f}ms" for b in backends)
        if len(backends) > 1:
            diff = np.max(np.abs(outputs[("cython", name)] - outputs[("python", name)]))
            line += f"{timings[('python', name)] / timings[('cython', name)]:9.2f}x   {diff:.2e}"
        print(line)
    if args.train_steps:
        for b in backends:
            with kernels.backend(b):
                print(f"{args.train_steps} stage-3 steps on {b}: {train_seconds(args.train_steps):.2f}s")


if __name__ == "__main__":
    main()
