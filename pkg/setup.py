import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "uspatem.backend._ckernels",
                ["src/uspatem/backend/_ckernels.pyx"],
                include_dirs=[numpy.get_include(), "src/uspatem/backend"],
                extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
else:
    # The package still works without the compiled kernels; the numpy
    # lane is selected at import time.
    extensions = []

setup(ext_modules=extensions)
