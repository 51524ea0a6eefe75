"""Exception hierarchy and CLI exit codes."""


class SoftQuantError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SoftQuantError):
    """Invalid configuration: bad shapes, unknown keys, incompatible specs."""


class InputError(SoftQuantError):
    """Invalid runtime input values (labels out of range, empty layers, ...)."""


class ParseError(InputError):
    """Malformed binary or text file.

    Carries the byte offset at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class NumericError(SoftQuantError):
    """Non-finite values encountered where finite numbers are required."""


class RefinementImpossibleError(SoftQuantError):
    """Cluster refinement cannot proceed: no cluster exceeds the size floor."""


# CLI exit codes. 1 is reserved for unexpected failures.
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_REFINEMENT = 4
