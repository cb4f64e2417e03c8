class TerraceError(Exception):
    """Base class for all package errors."""


class ContractError(TerraceError, ValueError):
    """A precondition on arguments was violated."""


class ShapeError(ContractError):
    pass


class ConfigError(ContractError):
    pass


class FormatError(TerraceError):
    """A file on disk is missing pieces or is malformed."""


class TruncationError(FormatError):
    pass


class PlacementError(TerraceError):
    """Scene generation could not place the requested buildings."""
