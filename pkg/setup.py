import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

kernels = Extension(
    name="carpe._kernels",
    sources=["src/carpe/_kernels.pyx"],
    include_dirs=[numpy.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(
    ext_modules=cythonize([kernels], compiler_directives={"language_level": "3"}),
)
