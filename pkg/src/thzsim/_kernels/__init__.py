"""Hot numerical kernels with a compiled core and a pure-Python fallback.

The Cython extension ``cy_core`` is built at install time; when it is absent
(or ``THZSIM_KERNEL_BACKEND=python`` is set) the numpy implementation in
``py_core`` is used instead.  Both expose the same functions and the test
suite checks they agree to float rounding.
"""

import os

from thzsim._kernels import py_core

_backend_name = "python"
_impl = py_core

_requested = os.environ.get("THZSIM_KERNEL_BACKEND", "auto").lower()
if _requested not in ("python",):
    try:
        from thzsim._kernels import cy_core as _cy

        _impl = _cy
        _backend_name = "cython"
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "THZSIM_KERNEL_BACKEND=cython but the compiled extension is "
                "not available; reinstall with a C compiler + Cython present"
            )


def kernel_backend() -> str:
    """Name of the active kernel backend: 'cython' or 'python'."""
    return _backend_name


def get_impl(name: str | None = None):
    """Return the kernel module ('python', 'cython' or the active one)."""
    if name is None or name == "auto":
        return _impl
    if name == "python":
        return py_core
    if name == "cython":
        from thzsim._kernels import cy_core

        return cy_core
    raise ValueError(f"unknown kernel backend {name!r}")


pga_ascent = _impl.pga_ascent
rank1_polish = _impl.rank1_polish
pap_sum = _impl.pap_sum
psd_project_trace = _impl.psd_project_trace
margins_at = _impl.margins_at
