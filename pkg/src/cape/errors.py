"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`CapeError`
so callers (the CLI in particular) can map families of failures to exit codes.
"""


class CapeError(Exception):
    """Base class for all package errors."""


# numeric / tensor errors ---------------------------------------------------

class NumericError(CapeError):
    pass


class ShapeMismatch(CapeError, ValueError):
    pass


class NotScalar(CapeError, ValueError):
    pass


class DegenerateNorm(NumericError):
    pass


class NonFiniteGradient(NumericError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


class AbortOnNaN(NumericError):
    def __init__(self, step, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


# configuration errors -------------------------------------------------------

class ConfigError(CapeError, ValueError):
    pass


class HeadDivisibility(ConfigError):
    pass


class SpecError(ConfigError):
    pass


# data errors ----------------------------------------------------------------

class DataError(CapeError):
    pass


class MissingToken(DataError, KeyError):
    def __init__(self, tokens):
        self.tokens = list(tokens)
        super().__init__("no embedding for: " + ", ".join(self.tokens))

    def __str__(self):
        return self.args[0]


class RaggedVectors(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class DimMismatch(DataError):
    pass


class UnseenAccessError(DataError):
    """Training code touched an unseen composition."""


class UnseenLabelInTraining(DataError):
    pass


class EmptyPartition(DataError):
    pass


class UnknownComposition(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown composition"


class KTooLarge(DataError, ValueError):
    pass
