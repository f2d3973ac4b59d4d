"""Exception types shared across the toolkit."""


class ForestRegError(Exception):
    """Base class for all toolkit errors."""


class BsrFormatError(ForestRegError):
    """Raised when a BSR file has a bad magic, header, or dtype."""


class BsrTruncationError(BsrFormatError):
    """Raised when a BSR payload is shorter than the header declares."""


class EmptyDatasetError(ForestRegError):
    """Raised when filtering or loading leaves no usable patches."""


class ConfigError(ForestRegError):
    """Raised for invalid or unknown configuration values."""


class ContractError(ForestRegError):
    """Raised when caller-supplied arrays violate a shape/dimension contract."""


class InsufficientAnchorsError(ForestRegError):
    """Raised when fewer than two anchor pixels are available."""


class DegenerateEmbeddingError(ForestRegError):
    """Raised when an embedding row has zero norm."""


class InsufficientStandsError(ForestRegError):
    """Raised when fewer than two stands have valid pixels."""


class UndefinedMetricError(ForestRegError):
    """Raised when a metric denominator is degenerate (zero variance / zero mean)."""


class DivergenceError(ForestRegError):
    """Raised when training produces a non-finite loss."""
