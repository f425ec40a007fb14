"""Build the optional Cython kernels; the package works without them."""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("FADNET_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "fadnet.numerics._ckernels",
                    ["src/fadnet/numerics/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except Exception as exc:  # compiler or Cython missing
        print(f"fadnet: building without compiled kernels ({exc})", file=sys.stderr)
        ext_modules = []

setup(ext_modules=ext_modules)
