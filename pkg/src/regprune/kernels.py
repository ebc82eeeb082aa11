"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment variable
``REGPRUNE_DISABLE_NUMBA`` is unset (or ``0``).  Both implementations stay
importable as ``numba_impl`` / ``numpy_impl`` so tests and the benchmark can
compare them directly.
"""

import logging
import os

import numpy as np

from . import _kernels_numpy as numpy_impl

log = logging.getLogger(__name__)

ENV_FLAG = "REGPRUNE_DISABLE_NUMBA"


def _numba_disabled():
    return os.environ.get(ENV_FLAG, "0").strip().lower() not in ("", "0", "false", "no")


try:
    from . import _kernels_numba as numba_impl

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _numba_disabled()
_impl = numba_impl if USE_NUMBA else numpy_impl
BACKEND = "numba" if USE_NUMBA else "numpy"
log.debug("regprune kernels backend: %s", BACKEND)


def splitmix64_block(state, n):
    return _impl.splitmix64_block(state, int(n))


# Softmax and entropy always run on numpy: their results are written into
# bundles and reports, and a compiled exp/sum can differ in the last ulp.
def softmax_rows(logits, scale=1.0):
    return numpy_impl.softmax_rows(np.ascontiguousarray(logits, dtype=np.float64), float(scale))


def entropy_rows(p):
    return numpy_impl.entropy_rows(np.ascontiguousarray(p, dtype=np.float64))


def peak_to_mean_abs(values, eps=1e-8):
    return _impl.peak_to_mean_abs(np.ascontiguousarray(values, dtype=np.float64), float(eps))


def count_retained(flat_scores, offsets, refs, lam):
    return _impl.count_retained(flat_scores, offsets, refs, float(lam))


def count_retained_grid(flat_scores, offsets, refs, lams):
    return _impl.count_retained_grid(
        flat_scores, offsets, refs, np.ascontiguousarray(lams, dtype=np.float64)
    )
