#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times each hot kernel on training-shaped inputs plus one full
forward/backward of the toy ensemble model, then prints a table.

    python3 benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import time

import numpy as np

import carpe.backend as K


def timeit(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def kernel_cases(rng):
    x = rng.normal(size=(80, 256))
    gy = rng.normal(size=(80, 256))
    gamma = rng.uniform(0.5, 1.5, 64)
    beta = rng.normal(size=64)
    xn = rng.normal(size=(80, 64))
    gn = rng.normal(size=(80, 64))
    scores = rng.normal(size=(320, 80))
    probs = K.softmax_rows(np.ascontiguousarray(scores))
    p = rng.normal(size=60_000)
    g = rng.normal(size=60_000)
    m = np.zeros_like(p)
    v = np.zeros_like(p)

    def adamw():
        K.adamw_update(p, g, m, v, 3, 1e-3, 0.9, 0.999, 1e-8, 0.01)

    _, mean, rstd = K.layernorm_forward(xn, gamma, beta, 1e-5)
    return {
        "gelu_forward (80x256)": lambda: K.gelu_forward(x),
        "gelu_backward (80x256)": lambda: K.gelu_backward(x, gy),
        "layernorm_forward (80x64)": lambda: K.layernorm_forward(xn, gamma, beta, 1e-5),
        "layernorm_backward (80x64)": lambda: K.layernorm_backward(xn, gamma, mean, rstd, gn),
        "softmax_rows (320x80)": lambda: K.softmax_rows(scores),
        "softmax_rows_backward": lambda: K.softmax_rows_backward(probs, scores),
        "adamw_update (60k params)": adamw,
    }


def model_step_case():
    from carpe import tensor as T
    from carpe.corpus import build_vocab
    from carpe.ensemble import CarpeModel, answer_loss
    from carpe.config import Config

    vocab = build_vocab()
    model = CarpeModel(Config().model, len(vocab))
    for _, group, t in model.named_params():
        t.requires_grad = group not in ("vision_encoders", "lm_body", "token_embed")
    rng = np.random.default_rng(0)
    from carpe.corpus import training_stream

    sample = training_stream(vocab, 1, seed=0)[0]

    def step():
        loss, _ = answer_loss(model, sample)
        loss.backward()

    return step


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    if "compiled" not in K.available():
        print("compiled kernels not built; run pip install -e . first")
        return 1

    rng = np.random.default_rng(0)
    rows = []
    for name, fn in kernel_cases(rng).items():
        times = {}
        for backend in ("python", "compiled"):
            K.use(backend)
            times[backend] = timeit(fn, args.repeats)
        rows.append((name, times["python"], times["compiled"]))

    step = model_step_case()
    times = {}
    for backend in ("python", "compiled"):
        K.use(backend)
        times[backend] = timeit(step, max(5, args.repeats // 20))
    rows.append(("full train forward+backward", times["python"], times["compiled"]))

    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  {'python':>10}  {'compiled':>10}  {'speedup':>8}")
    for name, py, cy in rows:
        print(f"{name:<{width}}  {py * 1e6:>8.1f}us  {cy * 1e6:>8.1f}us  {py / cy:>7.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
