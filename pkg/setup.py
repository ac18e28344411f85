"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a missing Cython or a failed compile only costs speed.
"""

from setuptools import Extension, setup

ext_modules = []
cmdclass = {}
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.command.build_ext import build_ext

    class _OptionalFlagsBuildExt(build_ext):
        """Retry without the tuning flags if the compiler rejects them."""

        def build_extension(self, ext):
            try:
                super().build_extension(ext)
            except Exception:
                if "-march=native" not in ext.extra_compile_args:
                    raise
                ext.extra_compile_args = [
                    f for f in ext.extra_compile_args if f != "-march=native"
                ]
                super().build_extension(ext)

    ext_modules = cythonize(
        [
            Extension(
                "fundusdl.kernels._ckernels",
                ["src/fundusdl/kernels/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-march=native"],
            )
        ],
        language_level=3,
    )
    cmdclass = {"build_ext": _OptionalFlagsBuildExt}
except ImportError:
    pass

setup(ext_modules=ext_modules, cmdclass=cmdclass)
