"""Build script: compiles the optional Cython kernel extension.

Set TWOPHASE_NO_EXTENSION=1 to skip the compiled core; the package then
runs on the pure-numpy kernel fallback.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("TWOPHASE_NO_EXTENSION") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "twophase._ckernels",
                    ["src/twophase/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level="3",
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
