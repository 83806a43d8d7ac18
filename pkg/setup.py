"""Builds the optional compiled kernel; the package works without it."""
from setuptools import setup

try:
    from Cython.Build import cythonize
    import numpy as np
    from setuptools import Extension
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("tflow._ckernels", ["src/tflow/_ckernels.pyx"],
                   include_dirs=[np.get_include()], extra_compile_args=["-O3"])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
