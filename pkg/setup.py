import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SPECSTOP_PURE") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "specstop.kernels._ckernels",
                    ["src/specstop/kernels/_ckernels.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # No Cython available: install pure-Python, the numpy fallback
        # backend is selected automatically at import time.
        ext_modules = []

setup(ext_modules=ext_modules)
