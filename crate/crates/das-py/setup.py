"""Builds the das_py extension by delegating to cargo.

Neither maturin nor setuptools-rust is assumed; this is the plain
setuptools recipe of overriding build_ext to run the cargo build and copy
the produced cdylib into place. Install from the workspace root with

    pip install --no-build-isolation -e crates/das-py
"""

import json
import shutil
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

CRATE_DIR = Path(__file__).resolve().parent
LIB_NAME = {"darwin": "libdas_py.dylib"}.get(sys.platform, "libdas_py.so")


class CargoBuild(build_ext):
    def build_extension(self, ext):
        subprocess.run(
            ["cargo", "build", "--release", "-p", "das-py"],
            cwd=CRATE_DIR,
            check=True,
        )
        meta = subprocess.run(
            ["cargo", "metadata", "--format-version", "1", "--no-deps"],
            cwd=CRATE_DIR,
            check=True,
            capture_output=True,
        )
        target_dir = Path(json.loads(meta.stdout)["target_directory"])
        built = target_dir / "release" / LIB_NAME
        out = Path(self.get_ext_fullpath(ext.name))
        out.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(built, out)


setup(
    ext_modules=[Extension("das_py", sources=[])],
    cmdclass={"build_ext": CargoBuild},
)
