"""Numerical kernels with a compiled fast path.

A small set of fused operations dominates denoiser runtime (softmax,
layer norm, GELU and the two short convolutions). They exist twice: a
Cython extension (`_fastops`) and a reference NumPy module
(`numpy_backend`). Selection happens once at import time:

  AVAMO_KERNELS=auto    compiled if present, else NumPy (default)
  AVAMO_KERNELS=cython  compiled, ImportError if the extension is missing
  AVAMO_KERNELS=numpy   always the reference backend

Both backends implement the same contract; see numpy_backend for shape
conventions. ``BACKEND`` names the active one.
"""

import os

from . import numpy_backend

_choice = os.environ.get("AVAMO_KERNELS", "auto").lower()
if _choice not in ("auto", "numpy", "cython"):
    raise ValueError(
        f"AVAMO_KERNELS must be 'auto', 'numpy' or 'cython', got {_choice!r}"
    )

if _choice == "numpy":
    _impl = numpy_backend
    BACKEND = "numpy"
else:
    try:
        from . import _fastops as _impl

        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        _impl = numpy_backend
        BACKEND = "numpy"

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
dwconv_fwd = _impl.dwconv_fwd
dwconv_bwd = _impl.dwconv_bwd
gateconv_fwd = _impl.gateconv_fwd
gateconv_bwd = _impl.gateconv_bwd


def available_backends():
    """Names of backends importable in this environment."""
    names = ["numpy"]
    try:
        from . import _fastops  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Return a backend module by name (for benchmarks and tests)."""
    if name == "numpy":
        return numpy_backend
    if name == "cython":
        from . import _fastops

        return _fastops
    raise ValueError(f"unknown backend {name!r}")
