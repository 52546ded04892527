"""Build script for the optional compiled kernels.

The package works without the extension (a NumPy fallback is selected at
import time); a failed compile therefore only costs speed, not correctness.
Build in place with:

    python setup.py build_ext --inplace
"""
import numpy
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Degrade to the pure-Python kernels if compilation fails."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, header mismatch, ...
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        import warnings

        warnings.warn(
            f"maskfuse: compiled kernels unavailable ({exc}); "
            "falling back to the NumPy implementation"
        )


def extensions():
    ext = Extension(
        "maskfuse._kernels",
        ["src/maskfuse/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize([ext], language_level=3)


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
