"""Build the optional compiled path kernel.

The package works without it: ``wmlmc.kernels`` falls back to the numpy
implementation when the extension is missing.
"""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - pure-Python install
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "wmlmc._kernels",
                ["src/wmlmc/_kernels.pyx"],
                # no FMA contraction: keeps results bit-identical to the numpy fallback
                extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
