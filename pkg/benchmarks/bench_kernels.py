"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 7] [--rows 4096]

Shapes follow real use: attention rows over a few hundred compositions,
layer norm over the 4096-wide hidden layer, and a bias sweep over an
evaluation split with a few thousand samples.
"""
import argparse
import timeit

import numpy as np

from cape import kernels


def cases(rows, rng):
    att = rng.normal(size=(rows // 8, 600))
    att_y = kernels.backend_module("numpy").softmax_rows(att)
    hid = rng.normal(size=(rows // 8, 4096))
    gamma, beta = rng.normal(size=4096), rng.normal(size=4096)
    _, xhat, rstd = kernels.backend_module("numpy").layer_norm_forward(hid, gamma, beta, 1e-5)
    g_hid = rng.normal(size=hid.shape)
    n = rows
    ms, mu = rng.random(n), rng.random(n)
    flags = [rng.random(n) < 0.5 for _ in range(4)]
    u8 = [f.astype(np.uint8) for f in flags]
    biases = np.sort(ms - mu)
    return {
        "softmax_rows": lambda m: m.softmax_rows(att),
        "softmax_rows_backward": lambda m: m.softmax_rows_backward(att_y, att),
        "layer_norm_forward": lambda m: m.layer_norm_forward(hid, gamma, beta, 1e-5),
        "layer_norm_backward": lambda m: m.layer_norm_backward(g_hid, xhat, rstd, gamma),
        "sweep_counts": lambda m: m.sweep_counts(ms, mu, *u8, biases),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--rows", type=int, default=4096)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if kernels.compiled is None:
        print("compiled kernels not built; only the numpy backend is available")
        backends = ["numpy"]
    else:
        backends = ["numpy", "cython"]
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<24}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases(args.rows, rng).items():
        best = {}
        for b in backends:
            mod = kernels.backend_module(b)
            fn(mod)  # warm up
            best[b] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3
        line = f"{name:<24}" + "".join(f"{best[b]:>12.3f}" for b in backends)
        if len(backends) == 2:
            line += f"{best['numpy'] / best['cython']:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
