"""Multi-user THz MIMO link simulator and semantics-aware beamforming toolkit."""

__version__ = "0.1.0"

from thzsim._kernels import kernel_backend

__all__ = ["kernel_backend", "__version__"]
