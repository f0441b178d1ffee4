"""Time the numba kernels against their numpy fallbacks and check agreement.

    python3 benchmarks/bench_kernels.py [--repeat 3]

The first numba call of each kernel includes compilation (or a cache load)
and is excluded by a warm-up run.
"""

import argparse
import time

import numpy as np

from mdelm import _kernels as K
from mdelm.elm import one_hot_targets
from mdelm.press import build_press


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_rbf(repeat):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(1500, 100))
    C = X[rng.choice(1500, 200, replace=False)]
    K.nb_rbf_activations(X[:2], C, 1.0)
    t_nb, a = best_of(lambda: K.nb_rbf_activations(X, C, 12.0), repeat)
    t_np, b = best_of(lambda: K.np_rbf_activations(X, C, 12.0), repeat)
    return t_nb, t_np, float(np.max(np.abs(a - b)))


def bench_trials(repeat):
    rng = np.random.default_rng(1)
    n, D, C = 1500, 500, 4
    H = rng.normal(size=(n, D))
    labels = rng.integers(0, C, n).astype(np.int64)
    s = build_press(H, one_hot_targets(labels, C), 1.0)
    E = np.ascontiguousarray(s.press_residuals())
    m = 4096
    idx = np.stack([rng.choice(n, 2, replace=False) for _ in range(m)]).astype(np.int64)
    new = ((labels[idx] + rng.integers(1, C, size=idx.shape)) % C).astype(np.int64)
    art = np.zeros(n, bool)
    art[:45] = True

    def run(fn):
        scores = np.zeros(n, dtype=np.int64)
        res = fn(E, s.inv_gap, s.hat, labels, idx, new, art, scores, 0, 1e18)
        return res, scores

    run(K.nb_trial_block)
    t_nb, a = best_of(lambda: run(K.nb_trial_block), repeat)
    t_np, b = best_of(lambda: run(K.np_trial_block), repeat)
    agree = a[0] == b[0] and np.array_equal(a[1], b[1])
    return t_nb, t_np, 0.0 if agree else float("inf")


def bench_sgd(repeat):
    rng = np.random.default_rng(2)
    n, d, C = 1200, 50, 4
    X = rng.normal(size=(n, d))
    y = rng.integers(0, C, n).astype(np.int64)
    sw = np.ones(n)
    order = rng.permutation(n).astype(np.int64)

    def run(fn):
        W, b, q = np.zeros((C, d)), np.zeros(C), np.zeros((C, d))
        fn(X, y, sw, order, W, b, q, 0.0, 0.0, 0.01, 0.7, 0.01)
        return W

    run(K.nb_sgd_epoch)
    t_nb, a = best_of(lambda: run(K.nb_sgd_epoch), repeat)
    t_np, b = best_of(lambda: run(K.np_sgd_epoch), repeat)
    return t_nb, t_np, float(np.max(np.abs(a - b)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<28} {'numba s':>10} {'numpy s':>10} {'speedup':>8} {'max diff':>10}")
    for name, fn in [("rbf 1500x200, d=100", bench_rbf),
                     ("trial_block 4096 x 2 flips", bench_trials),
                     ("sgd_epoch 1200x50, C=4", bench_sgd)]:
        t_nb, t_np, diff = fn(args.repeat)
        print(f"{name:<28} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>7.1f}x {diff:>10.2e}")


if __name__ == "__main__":
    main()
