"""Compare the compiled and pure-Python kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Runs both backends on identical inputs, checks that outputs agree bit for
bit, and reports the best wall time of each.
"""
import argparse
import math
import timeit

import numpy as np

from estfun import _pykernels

try:
    from estfun import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases():
    rng = np.random.default_rng(0)
    innov = rng.standard_normal(200_000)
    noise = rng.standard_normal(6400 * 50)
    h = 1.0 / (6400 * 50)
    return {
        "ar_filter AR(2), 200k steps": ("ar_filter", (np.array([0.5, 0.2]), innov, np.zeros(2))),
        "euler_affine OU, 6400 obs x 50 substeps": (
            "euler_affine",
            (0.0, 0.0, -1.0, 1.0, 0.0, h, math.sqrt(h), 50, noise, 1e8),
        ),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not available; timing the Python fallback only")

    print(f"{'case':<42} {'backend':<8} {'best [s]':>10} {'speedup':>9}")
    for label, (fn, fargs) in cases().items():
        times, outputs = {}, {}
        for name, mod in backends.items():
            f = getattr(mod, fn)
            outputs[name] = f(*fargs)
            times[name] = min(timeit.repeat(lambda: f(*fargs), number=1, repeat=args.repeat))
        if len(outputs) == 2:
            a, b = outputs["python"], outputs["cython"]
            a = a[0] if isinstance(a, tuple) else a
            b = b[0] if isinstance(b, tuple) else b
            assert np.asarray(a).tobytes() == np.asarray(b).tobytes(), f"{label}: backends disagree"
        for name, t in times.items():
            print(f"{label:<42} {name:<8} {t:>10.4f} {times['python'] / t:>8.1f}x")


if __name__ == "__main__":
    main()
