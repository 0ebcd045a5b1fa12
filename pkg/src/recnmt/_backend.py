"""Kernel backend selection.

The hot numeric kernels in :mod:`recnmt.kernels` come in two flavours: a
numba ``@njit`` version and a pure-numpy fallback. ``RECNMT_BACKEND``
selects which one is active:

* ``auto`` (default) - numba when importable, numpy otherwise
* ``numba``          - require numba, fail loudly if missing
* ``numpy``          - force the pure-numpy path

This is a performance switch only; within one backend results are fully
deterministic. It is the single environment variable the package reads
(the CLI itself never consults the environment for configuration).
"""

import os

_choice = os.environ.get("RECNMT_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ImportError(
        f"RECNMT_BACKEND must be auto, numba or numpy, got {_choice!r}"
    )

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

if _choice == "numba" and not HAVE_NUMBA:
    raise ImportError("RECNMT_BACKEND=numba but numba is not importable")

NUMBA_ENABLED = _choice == "numba" or (_choice == "auto" and HAVE_NUMBA)


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"
