class UnetrError(Exception):
    pass


class ShapeError(UnetrError, ValueError):
    pass


class ConfigurationError(UnetrError, ValueError):
    pass


class NumericalError(UnetrError, ArithmeticError):
    pass


class FormatError(UnetrError):
    pass


class ChecksumError(FormatError):
    pass


class DivergenceError(NumericalError):
    """Raised when training produces a non-finite loss.

    ``checkpoint`` holds the path of the last good checkpoint, if one was written.
    """
    def __init__(self, message: str, iteration: int, checkpoint=None) -> None:
        super().__init__(message)
        self.iteration = iteration
        self.checkpoint = checkpoint
