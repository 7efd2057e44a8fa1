"""Backend selection for the numeric kernels.

The Cython build (``urcod._kernels``) is used when it is importable; otherwise
the numpy implementations in ``urcod._pykernels`` are used. Set
``URCOD_PURE_PYTHON=1`` to force the fallback.
"""

import os

from urcod import _pykernels

try:
    if os.environ.get("URCOD_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from urcod import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

atrous_conv1d = _impl.atrous_conv1d
morph_gradient = _impl.morph_gradient
nearest_foreground_values = _impl.nearest_foreground_values


def available_backends():
    """Map of backend name to kernel module, for benchmarks and tests."""
    backends = {"python": _pykernels}
    try:
        from urcod import _kernels

        backends["cython"] = _kernels
    except ImportError:
        pass
    return backends
