"""Time the compiled kernels against the numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 256]

Both kernel sets are imported directly, so the comparison does not depend on
which backend the package selected at import.
"""
import argparse
import timeit

import numpy as np

from segtricks import _pykernels

try:
    from segtricks import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(size: int, rng: np.random.Generator):
    img = rng.random((size, size))
    blobs = np.ascontiguousarray(rng.random((size, size)) > 0.6, dtype=np.uint8)
    W = rng.random((12, 12))
    W = np.ascontiguousarray(W + W.T)
    A = rng.standard_normal((48, 48))
    A = np.ascontiguousarray(A + A.T)
    idx = np.arange(size * size).reshape(size, size)
    ei = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()]).astype(np.intp)
    ej = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()]).astype(np.intp)
    aw = rng.random(ei.size)
    s = rng.random(size * size)
    return {
        f"box_sum r=4 {size}x{size}": lambda k: k.box_sum(img, 4),
        f"label8 {size}x{size}": lambda k: k.label8(blobs),
        "brute_force_ncut n=12": lambda k: k.brute_force_ncut(W),
        "jacobi_eigh n=48": lambda k: k.jacobi_eigh(A, 1e-12, 100),
        f"gtv_loss_grad {ei.size} edges": lambda k: k.gtv_loss_grad(ei, ej, aw, s),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    backends = [("python", _pykernels)]
    if _ckernels is not None:
        backends.insert(0, ("cython", _ckernels))
    else:
        print("compiled extension not built; timing the numpy fallback only")

    print(f"{'kernel':32s}" + "".join(f"{name:>12s}" for name, _ in backends) + "     speedup")
    for label, fn in cases(args.size, rng).items():
        times = []
        for _, mod in backends:
            fn(mod)  # warm-up
            times.append(min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)))
        row = f"{label:32s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times)
        if len(times) == 2:
            row += f"  {times[1] / times[0]:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
