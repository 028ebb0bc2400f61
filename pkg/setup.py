"""Build the optional compiled kernels.

If Cython or a compiler is missing the package still installs and falls back
to the numpy kernels at import time.
"""
import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "phideid.neural._ckernels",
                ["src/phideid/neural/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffast-math"],
                # glibc's vector math library backs the vectorized exp/tanh loops
                libraries=["mvec", "m"] if sys.platform.startswith("linux") else [],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
