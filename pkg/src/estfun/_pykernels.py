"""Pure-Python versions of the path recursions in ``_ckernels.pyx``.

The arithmetic is written in the same order as the compiled code so both
backends produce identical floating point output.
"""
import math

import numpy as np


def ar_filter(coeffs, innov, init):
    coeffs = [float(c) for c in coeffs]
    q = len(coeffs)
    x = [float(v) for v in init]
    for e in np.asarray(innov, dtype=np.float64).tolist():
        acc = 0.0
        for k in range(q):
            acc = acc + coeffs[k] * x[-1 - k]
        x.append(acc + e)
    return np.array(x, dtype=np.float64)


def euler_affine(x0, p0, p1, q0, q1, h, sqrt_h, substeps, noise, guard):
    z = np.asarray(noise, dtype=np.float64).tolist()
    n = len(z) // substeps
    out = np.empty(n + 1, dtype=np.float64)
    out[0] = x0
    x = float(x0)
    idx = 0
    for i in range(n):
        for _ in range(substeps):
            x = x + (p0 + p1 * x) * h + (q0 + q1 * x) * sqrt_h * z[idx]
            idx += 1
        if not math.isfinite(x) or abs(x) > guard:
            return out, i + 1
        out[i + 1] = x
    return out, -1
