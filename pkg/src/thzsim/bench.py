"""Benchmark the compiled kernel core against the pure-Python fallback."""

import argparse
import time

import numpy as np

from thzsim._kernels import get_impl, kernel_backend


def _random_problem(rng, K=4, D=2):
    Tdet = (rng.standard_normal((K, K, D, D)) + 1j * rng.standard_normal((K, K, D, D)))
    Phi = np.zeros((K, K, D, D, D), dtype=np.complex128)
    PhiBar = np.zeros((K, K, D, D), dtype=np.complex128)
    for k in range(K):
        for i in range(K):
            for d in range(D):
                A = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
                Phi[k, i, d] = 0.05 * (A @ A.conj().T)
            B = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
            PhiBar[k, i] = 0.05 * (B @ B.conj().T)
    base = np.tile(np.eye(D, dtype=np.complex128), (K, 1, 1))
    w = np.abs(rng.standard_normal(K)) + 0.5
    Z0 = np.tile(0.1 * np.eye(D), (K, 1, 1))
    return Tdet, Phi, PhiBar, base, w, Z0


def _time(fn, repeat=5):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="thzsim-bench")
    ap.add_argument("--users", type=int, default=4)
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--iters", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    prob = _random_problem(rng, args.users, args.dim)
    Tdet, Phi, PhiBar, base, w, Z0 = prob
    backends = ["python"]
    try:
        get_impl("cython")
        backends.append("cython")
    except ImportError:
        pass

    print(f"active backend: {kernel_backend()}")
    print(f"K={args.users} D={args.dim} iters={args.iters}")
    header = f"{'kernel':<22s}" + "".join(f"{b:>14s}" for b in backends)
    print(header)
    rows = {
        "pga_ascent": lambda impl: impl.pga_ascent(
            Tdet, Phi, PhiBar, base, w, 0.5, 1.0, Z0, args.iters, 0.05, 1e30
        ),
        "rank1_polish": lambda impl: impl.rank1_polish(
            Tdet, Phi, PhiBar, base, w, 0.5, 1.0,
            0.3 * np.ones((args.users, args.dim)), args.iters, 0.05, 1e30
        ),
        "margins_at": lambda impl: impl.margins_at(Tdet, Phi, PhiBar, base, w, Z0, 0.0),
    }
    times = {}
    for name, call in rows.items():
        line = f"{name:<22s}"
        for b in backends:
            impl = get_impl(b)
            dt = _time(lambda: call(impl), repeat=args.repeat)
            times[(name, b)] = dt
            line += f"{dt * 1e3:>11.3f} ms"
        print(line)
    if "cython" in backends:
        for name in rows:
            speedup = times[(name, "python")] / max(times[(name, "cython")], 1e-12)
            print(f"{name}: cython speedup x{speedup:.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
