"""Benchmark the compiled kernels against the numpy fallback.

Runs the hot training kernels (one SGD epoch, loss, gradient) for each model
kind on identical inputs with both backends, reports wall time per call,
speedup, and the largest parameter deviation between the two results.

    python -m fedcostwavg.bench [--quick]
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from ._kernels import pyfallback


def _load_compiled():
    try:
        from ._kernels import _fastcore
        return _fastcore
    except ImportError:
        return None


def _make_problem(kind, n, d, c, h, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    if kind == "linreg":
        targets = rng.standard_normal((n, 1))
        w = rng.uniform(-0.1, 0.1, (d + 1) * 1)
    else:
        targets = rng.integers(0, c, n).astype(np.int64)
        dim = (d + 1) * c if kind == "logreg" else (d + 1) * h + (h + 1) * c
        w = rng.uniform(-0.1, 0.1, dim)
    perm = rng.permutation(n).astype(np.int64)
    return w, np.ascontiguousarray(X), np.ascontiguousarray(targets), perm


def _epoch_call(impl, kind, w, X, t, perm, lr, bs, h):
    if kind == "linreg":
        impl.linreg_sgd_epoch(w, X, t, perm, lr, bs)
    elif kind == "logreg":
        impl.logreg_sgd_epoch(w, X, t, perm, lr, bs)
    else:
        impl.mlp_sgd_epoch(w, X, t, perm, lr, bs, h)


def _time_epochs(impl, kind, base_w, X, t, perm, lr, bs, h, repeats):
    w = base_w.copy()
    start = time.perf_counter()
    for _ in range(repeats):
        _epoch_call(impl, kind, w, X, t, perm, lr, bs, h)
    return time.perf_counter() - start, w


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="smaller problem, fewer repeats")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    compiled = _load_compiled()
    if compiled is None:
        print("compiled kernels not available; nothing to compare "
              "(build with: python setup.py build_ext --inplace)", file=sys.stderr)

    n, d, c, h = (120, 8, 3, 16) if args.quick else (1000, 20, 5, 32)
    repeats = 20 if args.quick else 200
    lr, bs = 0.05, 32

    print(f"problem: n={n} d={d} classes={c} hidden={h}, "
          f"{repeats} epochs per kernel, batch_size={bs}")
    print(f"{'kernel':<18}{'numpy':>12}{'cython':>12}{'speedup':>10}{'max|diff|':>12}")
    for kind in ("linreg", "logreg", "mlp"):
        w, X, t, perm = _make_problem(kind, n, d, c, h, args.seed)
        t_py, w_py = _time_epochs(pyfallback, kind, w, X, t, perm, lr, bs, h, repeats)
        py_ms = 1000.0 * t_py / repeats
        if compiled is None:
            print(f"{kind + '_sgd_epoch':<18}{py_ms:>10.3f}ms{'-':>12}{'-':>10}{'-':>12}")
            continue
        t_cy, w_cy = _time_epochs(compiled, kind, w, X, t, perm, lr, bs, h, repeats)
        cy_ms = 1000.0 * t_cy / repeats
        diff = float(np.max(np.abs(w_py - w_cy)))
        print(f"{kind + '_sgd_epoch':<18}{py_ms:>10.3f}ms{cy_ms:>10.3f}ms"
              f"{t_py / t_cy:>9.2f}x{diff:>12.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
