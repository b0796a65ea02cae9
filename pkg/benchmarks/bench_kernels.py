"""Compiled halfspace kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on the same inputs under both backends; the end-to-end
rows time a projection and a redundancy removal with the backend forced
through ``CSSMPC_PURE_PYTHON`` in a subprocess.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cssmpc import _kernels
from cssmpc._kernels import fallback


def random_rows(rng, m, d):
    A = rng.standard_normal((m, d))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    b = 0.5 + rng.random(m)
    return np.ascontiguousarray(A), np.ascontiguousarray(b)


def cases(rng):
    A, b = random_rows(rng, 200, 4)
    C = np.ascontiguousarray(rng.standard_normal((200, 4)))
    A2, b2 = random_rows(rng, 60, 3)
    A3, b3 = random_rows(rng, 120, 5)
    cand = np.ones(A2.shape[0], dtype=np.uint8)
    return {
        "lp_max_many (200 rows, 200 dirs, d=4)": lambda k: k.lp_max_many(A, b, C),
        "clarkson (60 rows, d=3)": lambda k: k.clarkson(A2, b2, cand, 1e-8),
        "prune (60 rows, d=3)": lambda k: k.prune(A2, b2, 1e-8),
        "fm_combine (120 rows, d=5)": lambda k: k.fm_combine(A3, b3, 0, 1e-12),
        "merge_duplicates (400 rows)": lambda k: k.merge_duplicates(np.vstack([A, A]), np.r_[b, b], 1e-9),
    }


END_TO_END = """
import timeit, numpy as np
from cssmpc import polytope as pt, _kernels
rng = np.random.default_rng(0)
A = rng.standard_normal((40, 4)); A /= np.linalg.norm(A, axis=1, keepdims=True)
P = pt.Polytope(A, 0.5 + rng.random(40))
t1 = min(timeit.repeat(lambda: pt.remove_redundancy(P), number=1, repeat={r}))
t2 = min(timeit.repeat(lambda: pt.project_eliminate(P, [0, 1]), number=1, repeat={r}))
print(_kernels.BACKEND, t1, t2)
"""


def end_to_end(repeat):
    out = {}
    for pure in ("0", "1"):
        env = {**os.environ, "CSSMPC_PURE_PYTHON": pure}
        res = subprocess.run([sys.executable, "-c", END_TO_END.format(r=repeat)], env=env,
                             capture_output=True, text=True, check=True)
        name, t1, t2 = res.stdout.split()
        out[name] = (float(t1), float(t2))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels.BACKEND != "cython":
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
        return 1
    from cssmpc._kernels import _fm, _lp

    class Compiled:
        lp_max_many = staticmethod(_lp.lp_max_many)
        clarkson = staticmethod(_lp.clarkson)
        prune = staticmethod(_lp.prune)
        fm_combine = staticmethod(_fm.fm_combine)
        merge_duplicates = staticmethod(_fm.merge_duplicates)

    rng = np.random.default_rng(0)
    print(f"{'kernel':42s} {'cython [ms]':>12s} {'numpy [ms]':>12s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        tc = min(timeit.repeat(lambda: fn(Compiled), number=1, repeat=args.repeat))
        tp = min(timeit.repeat(lambda: fn(fallback), number=1, repeat=args.repeat))
        print(f"{name:42s} {tc * 1e3:12.3f} {tp * 1e3:12.3f} {tp / tc:8.1f}x")
    e2e = end_to_end(args.repeat)
    for i, name in enumerate(("remove_redundancy (40 rows, d=4)", "project_eliminate 4D -> 2D")):
        tc, tp = e2e["cython"][i], e2e["python"][i]
        print(f"{name:42s} {tc * 1e3:12.3f} {tp * 1e3:12.3f} {tp / tc:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
