"""Build script: compiles the optional warp-kernel extension.

The extension is a pure speedup; the package works without it (a numpy
fallback is selected at import time).  Any build failure is downgraded
to a warning so `pip install` never fails on a missing toolchain.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            warnings.warn(f"skipping compiled warp kernels: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            warnings.warn(f"skipping compiled extension {ext.name}: {exc}")


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError as exc:
        warnings.warn(f"Cython/numpy unavailable, building without compiled kernels: {exc}")
        return []
    ext = Extension(
        "latentflight._kernels._scatter_cy",
        sources=["src/latentflight/_kernels/_scatter_cy.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
