"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise, or
when ``PCAUDIO_PURE_PYTHON`` is set to a non-empty value other than ``0``,
the numpy implementations in ``_kernels_py`` are used.  ``use_backend``
switches at runtime (tests and the benchmark compare both).
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _kernels_ext
except ImportError:  # extension not built
    _kernels_ext = None

_BACKENDS = {"python": _kernels_py}
if _kernels_ext is not None:
    _BACKENDS["cython"] = _kernels_ext


def available_backends():
    return sorted(_BACKENDS)


def _default_backend():
    if os.environ.get("PCAUDIO_PURE_PYTHON", "") not in ("", "0"):
        return "python"
    return "cython" if "cython" in _BACKENDS else "python"


BACKEND = _default_backend()
_impl = _BACKENDS[BACKEND]


def use_backend(name):
    """Select ``"cython"`` or ``"python"``; returns the previous backend name."""
    global BACKEND, _impl
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available_backends()}")
    previous = BACKEND
    BACKEND, _impl = name, _BACKENDS[name]
    return previous


def softmax_forward(x, mask=None):
    return _impl.softmax_forward(x, mask)


def softmax_backward(y, gy):
    return _impl.softmax_backward(y, gy)


def conv_time_forward(x, w):
    return _impl.conv_time_forward(x, w)


def conv_time_backward(x, w, gy):
    return _impl.conv_time_backward(x, w, gy)
