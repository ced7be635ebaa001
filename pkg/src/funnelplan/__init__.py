"""Sampling-based feedback motion replanning over a library of certified funnels."""
from functools import lru_cache
from importlib import resources

__version__ = "0.1.0"


def bundled_path(name: str):
    """Path of a data file shipped with the package."""
    return resources.files(__name__).joinpath("data", name)


@lru_cache(maxsize=1)
def default_library():
    """The bundled 16-funnel library (shared, treat as read-only)."""
    from .funnel import FunnelLibrary

    return FunnelLibrary.load(bundled_path("library16.json"))
