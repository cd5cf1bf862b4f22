"""Kernel backend selection.

The compiled Cython core is preferred when importable; the numpy fallback is
used otherwise. Set DENOISEKD_KERNELS=numpy (or =compiled) to force a backend.
Both backends are bit-identical, so the choice only affects speed.
"""

import os

from . import patches_numpy

BACKEND = "numpy"
_impl = patches_numpy

_forced = os.environ.get("DENOISEKD_KERNELS", "").strip().lower()
if _forced not in ("", "numpy", "compiled"):
    raise ValueError(f"DENOISEKD_KERNELS must be 'numpy' or 'compiled', got {_forced!r}")

if _forced != "numpy":
    try:
        from . import _patchcore

        BACKEND = "compiled"
        _impl = _patchcore
    except ImportError:
        if _forced == "compiled":
            raise ImportError(
                "DENOISEKD_KERNELS=compiled but the _patchcore extension is not built; "
                "run `pip install -e . --no-build-isolation` to compile it"
            ) from None

im2col = _impl.im2col
col2im = _impl.col2im


def get_backends():
    """Return {name: module} for every importable backend (for benchmarks/tests)."""
    backends = {"numpy": patches_numpy}
    try:
        from . import _patchcore

        backends["compiled"] = _patchcore
    except ImportError:
        pass
    return backends
