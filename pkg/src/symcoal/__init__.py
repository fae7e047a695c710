"""Symmetric coalescents, Wright-Fisher models with bottlenecks and their
limiting jump diffusions."""
from importlib import metadata

try:
    __version__ = metadata.version("symcoal")
except metadata.PackageNotFoundError:
    __version__ = "0.0.0"
