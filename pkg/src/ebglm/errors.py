"""Exception hierarchy shared across the package."""


class EBGLMError(Exception):
    """Base class for all errors raised by ebglm."""


class DataError(EBGLMError, ValueError):
    """Bad user input: malformed files, out-of-support responses, degenerate columns."""


class ModelFormatError(DataError):
    """A model document is truncated, has the wrong version, or violates the schema."""


class DegeneratePriorError(EBGLMError, ArithmeticError):
    """The inverse posterior-mean map has no usable bracket (prior too close to a pure spike)."""
