"""Build script: compiles the optional calibration kernel.

The package works without the extension (a numpy fallback is selected at
import); building it just makes the Monte Carlo studies several times
faster. `pip install -e . --no-build-isolation` compiles it when Cython
and a C toolchain are present.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("POSEDIST_SKIP_EXTENSION", "").strip() not in ("1", "true"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "posedist._native",
                    ["src/posedist/_native.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "initializedcheck": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
