"""Hot numeric kernels with a compiled core and a NumPy fallback.

The Cython extension (`panohdr.kernels._native`) is preferred when it was
built; otherwise the pure-NumPy implementation is used. Both expose the
same functions and agree to floating tolerance. Set PANOHDR_NO_NATIVE=1
to force the fallback (used by the benchmark and the equivalence tests).
"""

import os

if os.environ.get("PANOHDR_NO_NATIVE"):
    from . import _fallback as _impl
else:
    try:
        from . import _native as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _fallback as _impl

from ._fallback import conv_out_size

BACKEND = _impl.BACKEND
im2col = _impl.im2col
col2im = _impl.col2im
spiky_occlusion = _impl.spiky_occlusion
boxes_occlusion = _impl.boxes_occlusion


def backends():
    """Return the available kernel implementations keyed by name."""
    from . import _fallback

    out = {"fallback": _fallback}
    try:
        from . import _native  # type: ignore[attr-defined]

        out["native"] = _native
    except ImportError:
        pass
    return out
