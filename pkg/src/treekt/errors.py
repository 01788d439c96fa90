"""Exception hierarchy shared across the package."""


class TreektError(Exception):
    """Base class for all treekt failures."""


class DataValidationError(TreektError):
    """Input data violates a format or consistency rule."""


class GenerationError(TreektError):
    """Question generation failed (transport, timeout, or unparseable output)."""
