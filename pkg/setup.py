import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # no Cython: install the numpy kernels only
    cythonize = None

extensions = [
    Extension(
        "dswap._kernels",
        ["src/dswap/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,  # a failed compile falls back to the numpy kernels
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}) if cythonize else [])
