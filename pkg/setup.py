"""Build script: compiles the optional Cython convolution core.

The package is fully functional without the extension (a NumPy fallback is
selected at import time), so a missing compiler or Cython must not fail the
install.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "monosurf._backend._conv_core",
                ["src/monosurf/_backend/_conv_core.pyx"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
    for ext in ext_modules:
        # -O3 without -ffast-math / -march=native: keeps results reproducible
        # across machines and identical to plain IEEE evaluation order.
        ext.extra_compile_args = ["-O3"]
except ImportError:
    pass


class _OptionalBuildExt:
    pass


if ext_modules:
    from setuptools.command.build_ext import build_ext
    from setuptools.errors import CCompilerError, ExecError, PlatformError

    class optional_build_ext(build_ext):
        def run(self):
            try:
                super().run()
            except (CCompilerError, ExecError, PlatformError, FileNotFoundError):
                print("warning: compiled kernel build failed; using NumPy fallback")

        def build_extension(self, ext):
            try:
                super().build_extension(ext)
            except (CCompilerError, ExecError, PlatformError, FileNotFoundError):
                print(f"warning: {ext.name} not built; using NumPy fallback")

    setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
else:
    setup()
