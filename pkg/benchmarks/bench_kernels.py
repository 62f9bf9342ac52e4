"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--points N] [--repeat R]
"""
import argparse
import timeit

import numpy as np

from coldplasma import _pykernels
from coldplasma.geometry import lens

try:
    from coldplasma import _ckernels
except ImportError:
    _ckernels = None


def inputs(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    verts = lens().boundary(512)[0]
    px, py = rng.uniform(-0.1, 1.1, n), rng.uniform(-0.1, 1.1, n)
    al, ga = rng.uniform(0.5, 2.0, n), rng.uniform(0.5, 2.0, n)
    be = rng.uniform(-0.4, 0.4, n)
    w1, w2 = rng.uniform(0.1, 1.0, n), np.ones(n)
    return (px, py, verts[:, 0].copy(), verts[:, 1].copy()), (al, be, ga, w1, w2)


def bench(mod, name, cls_args, form_args, repeat):
    t_cls = min(timeit.repeat(lambda: mod.classify_points(*cls_args, 1e-9), number=1, repeat=repeat))
    t_form = min(timeit.repeat(lambda: mod.form_margin(*form_args), number=1, repeat=repeat))
    return {"backend": name, "classify_points": t_cls, "form_margin": t_form}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cls_args, form_args = inputs(args.points)
    rows = [bench(_pykernels, "python", cls_args, form_args, args.repeat)]
    if _ckernels is None:
        print("compiled kernels not built; showing the fallback only")
    else:
        rows.append(bench(_ckernels, "cython", cls_args, form_args, args.repeat))
        a = np.asarray(_pykernels.classify_points(*cls_args, 1e-9))
        b = np.asarray(_ckernels.classify_points(*cls_args, 1e-9))
        fa, fb = _pykernels.form_margin(*form_args), np.asarray(_ckernels.form_margin(*form_args))
        print(f"agreement: classify {np.array_equal(a, b)}, form_margin max diff {np.max(np.abs(fa - fb)):.2e}")
    print(f"{args.points} points, {len(cls_args[2])} polygon vertices, best of {args.repeat}")
    print(f"{'backend':<8} {'classify_points [s]':>20} {'form_margin [s]':>16}")
    for r in rows:
        print(f"{r['backend']:<8} {r['classify_points']:>20.4f} {r['form_margin']:>16.5f}")
    if len(rows) == 2:
        print(f"speedup  {rows[0]['classify_points'] / rows[1]['classify_points']:>20.1f}x "
              f"{rows[0]['form_margin'] / rows[1]['form_margin']:>15.1f}x")


if __name__ == "__main__":
    main()
