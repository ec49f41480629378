"""Build the optional compiled kernel; the package works without it."""

import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("WHFL_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        np_random_lib = os.path.join(os.path.dirname(np.__file__), "random", "lib")
        ext = Extension(
            "whfl._kernels",
            ["src/whfl/_kernels.pyx"],
            include_dirs=[np.get_include()],
            library_dirs=[np_random_lib],
            libraries=["npyrandom", "m"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"],
        )
        ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
