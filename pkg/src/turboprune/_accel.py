"""Kernel backend selection.

``TURBOPRUNE_BACKEND=numpy`` forces the pure-numpy fallbacks, ``=numba``
requires the compiled kernels, anything else (or unset) auto-detects. Both
backends live side by side so ``benchmarks/compare_backends.py`` can time
them in one process.
"""

import os

from . import _kernels_numpy
from .errors import ConfigError

_requested = os.environ.get("TURBOPRUNE_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ConfigError(
        f"TURBOPRUNE_BACKEND must be one of auto|numba|numpy, got {_requested!r}"
    )

if _requested == "numpy":
    kernels = _kernels_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _kernels_numba as _kernels_nb

        kernels = _kernels_nb
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        kernels = _kernels_numpy
        BACKEND = "numpy"
