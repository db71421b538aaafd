"""Selects the compiled kernels when importable, else the numpy fallback.

Set ``GAITSEP_PURE_PYTHON=1`` before import to force the fallback.
"""

import os

from gaitsep import _pykernels

_impl = _pykernels
NAME = "python"

if os.environ.get("GAITSEP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from gaitsep import _ckernels
    except ImportError:  # extension not built
        _ckernels = None
    else:
        _impl = _ckernels
        NAME = "cython"
else:
    _ckernels = None

depthwise_forward = _impl.depthwise_forward
depthwise_backward = _impl.depthwise_backward
maxpool_backward = _impl.maxpool_backward
Engine = _impl.Engine


def available():
    """Return the kernel modules that can be imported in this environment."""
    mods = {"python": _pykernels}
    try:
        from gaitsep import _ckernels as ck
    except ImportError:
        return mods
    mods["cython"] = ck
    return mods
