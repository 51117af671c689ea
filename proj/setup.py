from glob import glob

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

# The extension compiles the whole C++ core alongside the bindings, so the
# package needs no separately built library.
ext = Pybind11Extension(
    "uhdformer._core",
    sorted(glob("src/*.cpp")),
    include_dirs=["include", "vendor"],
    libraries=["z"],
    cxx_std=20,
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
