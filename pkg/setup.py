"""Build the optional Cython extension for the Hausdorff distance kernels.

The package works without the extension (a pure-numpy fallback is selected
at import time); building it just makes bag clustering much faster.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
    import numpy

    extensions = cythonize(
        [
            Extension(
                "bmiml._hausdorff_cy",
                ["src/bmiml/_hausdorff_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
