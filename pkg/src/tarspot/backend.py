"""Kernel backend selection.

Hot per-pixel loops exist in two variants: numba ``@njit`` kernels and
vectorized numpy fallbacks. The active variant is chosen once at import
from the ``TARSPOT_BACKEND`` environment variable:

* ``auto`` (default) - numba when importable, else numpy
* ``numba``          - require numba, fail if missing
* ``numpy``          - force the numpy fallback even when numba is present

The two backends implement the same arithmetic and agree to float32
rounding (observed max plane difference ~3e-8, from vectorized libm
variants); results within one backend are bit-reproducible.
"""

from __future__ import annotations

import logging
import os

logger = logging.getLogger(__name__)

_CHOICES = ("auto", "numba", "numpy")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    HAVE_NUMBA = False


def _resolve(requested: str) -> str:
    if requested not in _CHOICES:
        raise ValueError(f"TARSPOT_BACKEND must be one of {_CHOICES}, got {requested!r}")
    if requested == "numba" and not HAVE_NUMBA:
        raise ImportError("TARSPOT_BACKEND=numba but numba is not importable")
    if requested == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    return requested


_active = _resolve(os.environ.get("TARSPOT_BACKEND", "auto"))
if _active == "numpy" and HAVE_NUMBA:
    logger.debug("numpy backend forced via TARSPOT_BACKEND")


def active_backend() -> str:
    """Name of the backend in use: ``"numba"`` or ``"numpy"``."""
    return _active


def use_numba() -> bool:
    return _active == "numba"


def set_backend(name: str) -> str:
    """Switch backend at runtime (used by tests and the benchmark command).

    Returns the previous backend name so callers can restore it.
    """
    global _active
    previous = _active
    _active = _resolve(name)
    return previous


def set_num_threads(n: int) -> None:
    """Limit numba's internal parallelism; no-op on the numpy backend."""
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if HAVE_NUMBA:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
