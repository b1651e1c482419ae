"""Build script: compiles the optional Cython kernel for the transfer planner.

The package works without the extension (a pure-Python fallback is selected
at import time), so a missing Cython or compiler only costs speed.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("epdsim._kernels", ["src/epdsim/_kernels.pyx"])],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
