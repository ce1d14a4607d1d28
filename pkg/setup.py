"""Build the optional compiled episode kernel.

The package works without it: ``cachebandit.backend`` falls back to the
pure-Python kernel when ``cachebandit._core`` cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("CACHEBANDIT_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "cachebandit._core",
                    ["src/cachebandit/_core.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            language_level="3",
            compiler_directives={"boundscheck": False, "wraparound": False, "cdivision": True},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
