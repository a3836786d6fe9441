"""Build the optional compiled convolution kernels.

If Cython or a C compiler is missing the package still installs and runs on
the numpy fallback in ``mgsolve._pykernels``.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("MGSOLVE_NO_EXT", "0") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        openmp = [] if sys.platform == "darwin" else ["-fopenmp"]
        ext_modules = cythonize(
            [
                Extension(
                    "mgsolve._ckernels",
                    ["src/mgsolve/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"] + openmp,
                    extra_link_args=openmp,
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError as exc:  # pragma: no cover
        print(f"mgsolve: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
