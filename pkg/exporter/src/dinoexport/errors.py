"""Exception types for the exporter."""


class ExportError(Exception):
    """Base class for exporter failures."""


class ModelUnavailable(ExportError):
    """The requested encoder model could not be constructed or loaded."""


class ShapeMismatch(ExportError):
    """An input shape violates what the encoder or format requires."""


class FormatError(ExportError):
    """A file does not parse as the format it claims to be."""
