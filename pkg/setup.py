import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("TALC_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [Extension("talc.numerics._kernels", ["src/talc/numerics/_kernels.pyx"], extra_compile_args=["-O3"])],
            language_level="3",
        )

setup(ext_modules=ext_modules)
