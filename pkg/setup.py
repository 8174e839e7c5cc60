import numpy
from setuptools import Extension, setup

# The compiled kernel is optional: if Cython or a C compiler is missing the
# package installs pure-Python and thzsim._kernels falls back at import time.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "thzsim._kernels.cy_core",
                ["src/thzsim/_kernels/cy_core.pyx"],
                extra_compile_args=["-O3"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
