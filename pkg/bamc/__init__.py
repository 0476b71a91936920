"""bamc"""
import importlib

try:
    from .version import version

    __version__ = version
except ImportError:
    __version__ = "v0.0.0"

from .chains import ProblemInstance, build_instance

name = "bamc"

SUBMODULES = [
    "chains",
    "concentration",
    "config",
    "estimation",
    "experiment",
    "generators",
    "instancefiles",
    "policies",
]

for submodule in SUBMODULES + ["bamccli"]:
    importlib.import_module("bamc." + submodule)
