import os

import numpy as np
from setuptools import Extension, setup

# The traversal kernel is optional: without a compiler (or with
# INVRENDER_NO_EXT=1) the package installs and runs on the numpy fallback.
ext_modules = []
if os.environ.get("INVRENDER_NO_EXT", "0") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "invrender.accel._traverse",
                    ["src/invrender/accel/_traverse.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: results must match the numpy fallback bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off", "-fopenmp"],
                    extra_link_args=["-fopenmp"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
