"""Build script for the optional compiled kernel core.

The package works without the extension (a NumPy fallback is selected at
import time); building it just makes the ray-marching and im2col/col2im
kernels much faster. `python setup.py build_ext --inplace` or a regular
pip install both try to compile it.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "panohdr.kernels._native",
                ["src/panohdr/kernels/_native.pyx"],
                extra_compile_args=["-O3", "-fopenmp"],
                extra_link_args=["-fopenmp"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
