"""Structure-preserving DG solver for 2D linear hyperbolic systems on
periodic torus meshes.

Submodule imports are lazy so the command line entry point can cap the
BLAS thread pool before numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = ("mesh", "quadrature", "spaces", "operators", "systems",
               "solver", "diagnostics", "properties", "cli")


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module 'torusdg' has no attribute {name!r}")


def __dir__():
    return sorted(list(_SUBMODULES) + ["__version__"])
