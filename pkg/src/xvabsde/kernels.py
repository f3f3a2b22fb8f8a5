"""Kernel backend selection.

The Cython extension ``_ckernels`` is used when it was built; otherwise the
numpy implementation in ``_pykernels`` is used. Setting the environment
variable ``XVA_BSDE_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("XVA_BSDE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"


def uniforms(seed, stream, path_start, n_paths, n_draws, impl=None):
    """Uniforms keyed by (seed, stream, path index, draw index)."""
    impl = impl or _impl
    return impl.uniforms(int(seed), int(stream), int(path_start), int(n_paths), int(n_draws))


def normals(seed, stream, path_start, n_paths, n_draws, impl=None):
    """Standard normals by Box-Muller on counter-based uniform pairs.

    Draw ``j`` of path ``p`` depends only on ``(seed, stream, p, j)``, so any
    partition of the paths across workers reproduces the same numbers.
    """
    u = uniforms(seed, stream, path_start, n_paths, 2 * n_draws, impl=impl)
    return np.sqrt(-2.0 * np.log(u[:, 0::2])) * np.cos(2.0 * np.pi * u[:, 1::2])


def thomas(a, b, c, d, impl=None):
    impl = impl or _impl
    return impl.thomas(
        np.ascontiguousarray(a, dtype=np.float64),
        np.ascontiguousarray(b, dtype=np.float64),
        np.ascontiguousarray(c, dtype=np.float64),
        np.ascontiguousarray(d, dtype=np.float64),
    )
