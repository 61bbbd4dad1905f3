"""Build the optional Cython kernels.

The package works without them: ``ma4bdi.kernels`` falls back to the pure
Python implementation when the extension is missing.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("MA4BDI_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "ma4bdi._kernels",
                    ["src/ma4bdi/_kernels.pyx"],
                    # no -ffast-math: results must match the Python fallback bit for bit
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
