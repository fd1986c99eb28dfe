"""Compare the compiled kernels with the numpy fallback.

Times each kernel on synthetic blocks, then a short end-to-end AdaSDBO run
under both backends (each in its own interpreter, since the backend is fixed
at import).

    python3 benchmarks/bench_kernels.py [--agents 20] [--dim 50] [--repeat 200]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from adasdbo import _kernels_py

try:
    from adasdbo import _kernels as _compiled
except ImportError:
    _compiled = None

RUN_SNIPPET = """
import json, time
from adasdbo import QuadraticBilevel, AdaSDBOConfig, build_ring, run
from adasdbo.kernels import BACKEND
prob = QuadraticBilevel.random({n}, {d}, {d}, seed=0, scale=0.1, heterogeneity=0.5)
t = time.perf_counter()
run(prob, build_ring({n}, 0.4), AdaSDBOConfig(rounds={rounds}), stride={rounds})
print(json.dumps({{"backend": BACKEND, "seconds": time.perf_counter() - t}}))
"""


def kernel_cases(n, d, seed=0):
    g = np.random.default_rng(seed)
    blocks = [g.standard_normal((n, d)) for _ in range(6)]
    accs = [100 + g.random(n) for _ in range(3)]
    W = g.random((n, n))

    def adaptive(mod):
        x, y, v = (b.copy() for b in blocks[:3])
        a = [c.copy() for c in accs]
        q, u, z = np.empty(n), np.empty(n), np.empty(n)
        return lambda: mod.adaptive_update(x, y, v, *blocks[3:], *a, 1.0, 1.0, 1.0, q, u, z)

    def constant(mod):
        x, y, v = (b.copy() for b in blocks[:3])
        return lambda: mod.constant_update(x, y, v, *blocks[3:], 1e-3, 1e-3, 1e-3)

    def project(mod):
        V = blocks[0].copy()
        return lambda: mod.project_rows(V, 1.0)

    return {
        "row_sq_norms": lambda mod: (lambda: mod.row_sq_norms(blocks[0])),
        "mix_rows": lambda mod: (lambda: mod.mix_rows(W, blocks[0])),
        "adaptive_update": adaptive,
        "constant_update": constant,
        "project_rows": project,
    }


def time_kernels(n, d, repeat):
    rows = []
    for name, make in kernel_cases(n, d).items():
        py = min(timeit.repeat(make(_kernels_py), number=repeat, repeat=3)) / repeat
        cc = (min(timeit.repeat(make(_compiled), number=repeat, repeat=3)) / repeat
              if _compiled is not None else float("nan"))
        rows.append((name, py, cc))
    return rows


def time_run(backend, n, d, rounds):
    env = dict(os.environ, ADASDBO_KERNELS=backend)
    code = RUN_SNIPPET.format(n=n, d=d, rounds=rounds)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    if out.returncode != 0:
        return None
    return json.loads(out.stdout)["seconds"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--agents", type=int, default=20)
    ap.add_argument("--dim", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--rounds", type=int, default=500)
    args = ap.parse_args(argv)

    print(f"kernels on ({args.agents}, {args.dim}) blocks, microseconds per call")
    print(f"{'kernel':18s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, py, cc in time_kernels(args.agents, args.dim, args.repeat):
        print(f"{name:18s} {py * 1e6:10.2f} {cc * 1e6:10.2f} {py / cc:8.2f}")

    print(f"\nend-to-end AdaSDBO run, n={args.agents}, p=q={args.dim}, "
          f"{args.rounds} rounds (seconds)")
    for backend in ("python", "compiled"):
        secs = time_run(backend, args.agents, args.dim, args.rounds)
        print(f"{backend:10s} {'unavailable' if secs is None else f'{secs:.3f}'}")


if __name__ == "__main__":
    main()
