"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from xvabsde import _pykernels

try:
    from xvabsde import _ckernels
except ImportError:
    _ckernels = None


def _tridiag(n, seed=0):
    rng = np.random.default_rng(seed)
    a, c = rng.uniform(-1, 0, n), rng.uniform(-1, 0, n)
    b = 3.0 + rng.uniform(0, 1, n)
    a[0] = c[-1] = 0.0
    return a, b, c, rng.normal(size=n)


def cases():
    sys_ = _tridiag(401)
    return {
        "uniforms 4096x200": lambda k: k.uniforms(12345, 0, 0, 4096, 200),
        "thomas n=401": lambda k: k.thomas(*sys_),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    impls = {"python": _pykernels}
    if _ckernels is not None:
        impls["cython"] = _ckernels
    else:
        print("compiled kernels not built; timing the numpy fallback only")
    print(f"{'kernel':<20} " + " ".join(f"{k:>12}" for k in impls) + "     speedup")
    for name, fn in cases().items():
        times = {}
        for k, mod in impls.items():
            number = 200 if name.startswith("thomas") else 3
            times[k] = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
        row = " ".join(f"{times[k] * 1e3:10.3f}ms" for k in impls)
        speed = f"{times['python'] / times['cython']:8.1f}x" if "cython" in times else ""
        print(f"{name:<20} {row} {speed}")
    if _ckernels is not None:
        same = np.array_equal(_pykernels.uniforms(1, 2, 3, 50, 7), _ckernels.uniforms(1, 2, 3, 50, 7))
        print(f"uniform streams bit-identical: {same}")


if __name__ == "__main__":
    main()
