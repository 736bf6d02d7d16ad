"""Backend selection for the SGD inner loops.

The compiled extension is used when it was built; setting
``ELASTLAB_PURE_PYTHON=1`` forces the pure-Python loops.
"""
import os

from . import _pykernels as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("ELASTLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    BACKEND = "cython"
    _active = compiled_backend
else:
    BACKEND = "python"
    _active = python_backend

quad_run = _active.quad_run
relu_run = _active.relu_run


def get_backend(name):
    """Return the kernel module called ``name`` ("python" or "cython")."""
    if name == "python":
        return python_backend
    if name == "cython":
        if compiled_backend is None:
            raise ImportError("compiled kernels are not built")
        return compiled_backend
    raise ValueError(f"unknown backend {name!r}")
