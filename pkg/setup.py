import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "symint._evalkernel",
        ["src/symint/_evalkernel.pyx"],
        include_dirs=[np.get_include()],
        # keep libm calls separate (no sincos fusion, no FMA) so both backends round identically
        extra_compile_args=["-O3", "-fno-builtin", "-ffp-contract=off"],
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
