from setuptools import setup, Extension

import numpy as np

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "tetforge._ckern",
                ["src/tetforge/_ckern.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fno-math-errno"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
