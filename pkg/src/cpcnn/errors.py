"""Exception types shared across the package."""


class CPCNNError(Exception):
    """Base class; ``kind`` is the short tag printed by the CLI."""

    kind = "error"


class ParameterError(CPCNNError, ValueError):
    kind = "parameter"


class ShapeError(CPCNNError, ValueError):
    kind = "shape"


class ConfigError(CPCNNError, ValueError):
    kind = "config"


class IngestionError(CPCNNError, IOError):
    kind = "ingestion"


class FormatError(CPCNNError, ValueError):
    kind = "format"


class CycleError(CPCNNError, RuntimeError):
    kind = "internal"


class DivergenceError(CPCNNError, RuntimeError):
    kind = "divergence"
