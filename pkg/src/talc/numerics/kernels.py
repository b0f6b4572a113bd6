"""Backend selection for the row kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``TALC_KERNELS=python`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("TALC_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
silu_fwd = _impl.silu_fwd
silu_bwd = _impl.silu_bwd


def backend():
    return BACKEND
