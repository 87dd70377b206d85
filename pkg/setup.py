from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "usgan.kernels._fastkernels",
                ["src/usgan/kernels/_fastkernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ]
    )
except ImportError:
    # pure-python fallback is selected at import time
    extensions = []

setup(ext_modules=extensions)
