"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (the numpy backend
is selected at import time), so a missing compiler or Cython only costs
speed, not features. `python setup.py build_ext --inplace` is the quickest
way to get the fast backend during development.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Degrade to a pure-Python install when the extension cannot build."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            warnings.warn(f"compiled kernels skipped ({exc}); numpy backend will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"compiled kernels skipped ({exc}); numpy backend will be used")


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    import os

    if os.name == "posix":
        compile_args = ["-O3", "-fopenmp"]
        link_args = ["-fopenmp"]
    else:
        compile_args = ["/O2", "/openmp"]
        link_args = []
    ext = Extension(
        "fusecast.kernels._native",
        ["src/fusecast/kernels/_native.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=compile_args,
        extra_link_args=link_args,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
