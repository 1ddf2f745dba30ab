import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("WECDESK_PURE") != "1" and os.path.exists(
    "src/wecdesk/kernels/_native.pyx"
):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "wecdesk.kernels._native",
                    ["src/wecdesk/kernels/_native.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        # No Cython available: install the pure-Python fallback only.
        ext_modules = []

setup(ext_modules=ext_modules)
