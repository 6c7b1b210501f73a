"""Benchmark the numba kernels against the pure-numpy fallback.

Run: python3 benchmarks/bench_kernels.py [--batch 64] [--frames 200] [--runs 20]

Each kernel gets a warmup call first (the numba backend compiles on first
use), then `runs` timed repetitions per backend. Shapes default to roughly
one training batch of the desk-scale benchmark. Numbers are wall time via
perf_counter; the table reports the per-call mean and the speedup.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mqpool.kernels import nb_kernels, np_kernels


def make_inputs(rng, B, T, K, Q, H, P):
    kp = K // H
    x = rng.normal(size=(B, T, K))
    mask = np.ones((B, T))
    for b in range(B):
        mask[b, int(rng.integers(1, T + 1)) :] = 0.0
    xh = np.where(mask[:, :, None] == 1.0, x, 0.0).reshape(B, T, H, kp)
    e = rng.normal(size=(B, Q, H, T))
    w = nb_kernels.masked_softmax_fwd(e, mask)
    mu = np_kernels.masked_mean_fwd(x, mask)
    sigma = np_kernels.masked_std_fwd(x, mask, mu)
    g_bk = rng.normal(size=(B, K))
    g_bqht = rng.normal(size=(B, Q, H, T))
    g_bqhk = rng.normal(size=(B, Q, H, kp))
    g_bqhtp = rng.normal(size=(B, Q, H, T, P))
    scorer = {
        "w": rng.normal(size=(Q, H, kp)),
        "b": rng.normal(size=(Q, H)),
        "w1": rng.normal(size=(Q, H, kp, P)),
        "b1": rng.normal(size=(Q, H, P)),
        "w2": rng.normal(size=(Q, H, P)),
        "b2": rng.normal(size=(Q, H)),
    }
    a = np_kernels.scores_hidden_fwd(xh, scorer["w1"], scorer["b1"])
    _, arg = np_kernels.masked_max_fwd(x, mask)
    n_param = 4096
    adam = [rng.normal(size=n_param) for _ in range(2)] + [
        np.zeros(n_param),
        np.abs(rng.normal(size=n_param)),
    ]
    return {
        "masked_max_fwd": (x, mask),
        "masked_max_bwd": (g_bk, arg, T),
        "masked_mean_fwd": (x, mask),
        "masked_mean_bwd": (g_bk, mask),
        "masked_std_fwd": (x, mask, mu),
        "masked_std_bwd": (g_bk, x, mask, mu, sigma),
        "scores_linear_fwd": (xh, scorer["w"], scorer["b"]),
        "scores_linear_bwd": (g_bqht, xh, scorer["w"]),
        "scores_hidden_fwd": (xh, scorer["w1"], scorer["b1"]),
        "scores_hidden_bwd": (g_bqhtp, xh, scorer["w1"]),
        "scores_out_fwd": (a, scorer["w2"], scorer["b2"]),
        "scores_out_bwd": (g_bqht, a, scorer["w2"]),
        "masked_softmax_fwd": (e, mask),
        "masked_softmax_bwd": (g_bqht, w),
        "weighted_mean_fwd": (w, xh),
        "weighted_mean_bwd": (g_bqhk, w, xh),
        "weighted_sqmean_fwd": (w, xh),
        "weighted_sqmean_bwd": (g_bqhk, w, xh),
        "adamw_update": adam,
    }


def time_call(fn, args, runs):
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.mean(times))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--frames", type=int, default=200)
    ap.add_argument("--features", type=int, default=32)
    ap.add_argument("--queries", type=int, default=2)
    ap.add_argument("--heads", type=int, default=2)
    ap.add_argument("--hidden", type=int, default=16)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    inputs = make_inputs(
        rng, args.batch, args.frames, args.features, args.queries, args.heads, args.hidden
    )
    shape = (args.batch, args.frames, args.features)
    print(f"shape [B,T,K] = {shape}, Q={args.queries}, H={args.heads}, runs = {args.runs}")
    print(f"{'kernel':22s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>9s}")

    totals = [0.0, 0.0]
    for name, call_args in inputs.items():
        nb_fn = getattr(nb_kernels, name)
        np_fn = getattr(np_kernels, name)
        if name == "adamw_update":
            # in-place update; fixed step args appended per call
            p, g, m, v = call_args
            np_args = (p.copy(), g, m.copy(), v.copy(), 1, 1e-3, 0.9, 0.999, 1e-8, 0.01)
            nb_args = (p.copy(), g, m.copy(), v.copy(), 1, 1e-3, 0.9, 0.999, 1e-8, 0.01)
        else:
            np_args = nb_args = call_args
        nb_fn(*nb_args)  # warmup triggers compilation
        np_fn(*np_args)
        t_np = time_call(np_fn, np_args, args.runs)
        t_nb = time_call(nb_fn, nb_args, args.runs)
        totals[0] += t_np
        totals[1] += t_nb
        print(f"{name:22s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.1f}x")

    print(f"{'total':22s} {totals[0] * 1e3:10.3f} {totals[1] * 1e3:10.3f} "
          f"{totals[0] / totals[1]:8.1f}x")


if __name__ == "__main__":
    main()
