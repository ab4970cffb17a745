class PaveForgeError(Exception):
    """Base class for errors raised by pave_forge."""


class DataError(PaveForgeError):
    """Input data is missing, corrupt, or inconsistent with the request."""
