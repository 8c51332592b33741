"""Build script for the optional compiled convolution kernels.

The package is pure Python plus one Cython extension. If Cython (or a C
compiler) is unavailable the extension is skipped and the numpy fallback
in ``salfuse.kernels`` is used at runtime.
"""

from setuptools import Extension, setup


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "salfuse.kernels._convkern",
        sources=["src/salfuse/kernels/_convkern.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
