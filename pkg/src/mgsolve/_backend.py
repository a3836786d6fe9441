"""Select the convolution kernel implementation at import time.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback. ``MGSOLVE_BACKEND=python`` forces the fallback, and
``MGSOLVE_THREADS`` caps the compiled kernels' thread count (0, the default,
means sequential and bitwise reproducible).
"""
import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

_BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError as exc:  # pragma: no cover - depends on the build
    logger.debug("compiled kernels unavailable: %s", exc)
else:
    _BACKENDS["compiled"] = _ckernels


def _default_name():
    requested = os.environ.get("MGSOLVE_BACKEND", "").strip().lower()
    if requested:
        if requested not in _BACKENDS:
            logger.warning("backend %r unavailable, using fallback", requested)
            return "compiled" if "compiled" in _BACKENDS else "python"
        return requested
    return "compiled" if "compiled" in _BACKENDS else "python"


def _default_threads():
    try:
        return max(0, int(os.environ.get("MGSOLVE_THREADS", "0")))
    except ValueError:
        return 0


kernels = _BACKENDS[_default_name()]
num_threads = _default_threads()


def available():
    """Names of the importable kernel backends."""
    return sorted(_BACKENDS)


def current():
    return "compiled" if kernels is not _pykernels else "python"


def use(name):
    """Switch the active backend; returns the previous name."""
    global kernels
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available()}")
    previous = current()
    kernels = _BACKENDS[name]
    return previous


def set_threads(n):
    global num_threads
    num_threads = max(0, int(n))
