"""Pavement-damage augmentation and detection-math toolkit."""

from pave_forge.errors import DataError, PaveForgeError

__version__ = "0.1.0"

__all__ = ["DataError", "PaveForgeError", "__version__"]
