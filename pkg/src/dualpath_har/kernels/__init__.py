"""Convolution kernel backend, selected once at import time.

The compiled Cython core is preferred when built; otherwise the
vectorized numpy fallback is used. Set ``DUALPATH_HAR_KERNELS`` to
``numpy`` or ``cython`` to force a backend (``cython`` raises if the
extension is missing). The active choice is exposed as ``BACKEND``.
"""

import os

from . import numpy_backend

_requested = os.environ.get("DUALPATH_HAR_KERNELS", "auto").lower()
if _requested not in ("auto", "numpy", "cython"):
    raise ValueError(
        f"DUALPATH_HAR_KERNELS must be 'auto', 'numpy' or 'cython', got {_requested!r}"
    )

_impl = None
if _requested in ("auto", "cython"):
    try:
        from . import _conv as _compiled
        _impl = _compiled
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "DUALPATH_HAR_KERNELS=cython but the compiled extension is not "
                "built; run `pip install -e . --no-build-isolation`"
            ) from None
if _impl is None:
    _impl = numpy_backend

BACKEND = _impl.name
conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward


def available_backends():
    """Names of backends importable in this build."""
    names = ["numpy"]
    try:
        from . import _conv  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Return the backend module for `name` ('numpy' or 'cython')."""
    if name == "numpy":
        return numpy_backend
    if name == "cython":
        from . import _conv
        return _conv
    raise ValueError(f"unknown kernel backend {name!r}")
