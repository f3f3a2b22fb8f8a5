"""Pure numpy fallback for the compiled kernels; same results bit for bit."""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
STREAM_MULT = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 2.0**-53


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniforms(seed, stream, path_start, n_paths, n_draws):
    one = np.ones(1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = _mix(_mix(np.uint64(seed) * one + GOLDEN) ^ ((np.uint64(stream) * one + one) * STREAM_MULT))
        paths = np.arange(path_start, path_start + n_paths, dtype=np.uint64) + one
        keys = _mix(base + paths * GOLDEN)
        draws = (np.arange(n_draws, dtype=np.uint64) + one) * GOLDEN
        z = _mix(keys[:, None] + draws[None, :])
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def thomas(a, b, c, d):
    n = len(b)
    cp = np.empty(n)
    x = np.empty(n)
    cp[0] = c[0] / b[0]
    x[0] = d[0] / b[0]
    for i in range(1, n):
        m = b[i] - a[i] * cp[i - 1]
        cp[i] = c[i] / m
        x[i] = (d[i] - a[i] * x[i - 1]) / m
    for i in range(n - 2, -1, -1):
        x[i] = x[i] - cp[i] * x[i + 1]
    return x
