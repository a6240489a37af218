"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-N wall time of each backend and
the speedup, and checks that both backends return identical bytes.
"""

import argparse
import time

import numpy as np

from ddgan import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def bench_adam(impl, n, steps):
    rng = np.random.default_rng(0)
    grads = rng.standard_normal((steps, n))

    def run():
        p, m, v = np.zeros(n), np.zeros(n), np.zeros(n)
        for t in range(steps):
            impl.adam_update(p, grads[t], m, v, 1e-3, 0.9, 0.999, 1e-8, t + 1)
        return p
    return run


def bench_scores(impl, queries, gallery, n_relevant):
    rng = np.random.default_rng(1)
    rel = (rng.random((queries, gallery)) < n_relevant / gallery).astype(np.uint8)
    counts = np.maximum(rel.sum(axis=1), 1).astype(np.int64)
    return lambda: impl.query_scores(rel, counts, 32)


def _bytes(out):
    parts = out if isinstance(out, tuple) else (out,)
    return b"".join(np.asarray(p).tobytes() for p in parts)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if "compiled" not in kernels.BACKENDS:
        raise SystemExit("compiled kernels are not built; run `pip install -e .` first")
    cases = {
        "adam_update  (1M params x 10 steps)": lambda impl: bench_adam(impl, 1_000_000, 10),
        "query_scores (2000 queries x 1260 gallery)": lambda impl: bench_scores(impl, 2000, 1260, 80),
    }
    print(f"{'kernel':<44}{'python s':>10}{'compiled s':>12}{'speedup':>9}")
    for name, make in cases.items():
        py_fn, c_fn = make(kernels.BACKENDS["python"]), make(kernels.BACKENDS["compiled"])
        py_out, c_out = py_fn(), c_fn()
        same = _bytes(py_out) == _bytes(c_out)
        t_py, t_c = best_of(py_fn, args.repeat), best_of(c_fn, args.repeat)
        print(f"{name:<44}{t_py:>10.4f}{t_c:>12.4f}{t_py / t_c:>8.1f}x{'' if same else '  MISMATCH'}")


if __name__ == "__main__":
    main()
