"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array or parameter shapes do not line up."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


class ParseError(ValueError):
    """A dataset or report file could not be parsed."""


class ConfigError(ValueError):
    """An experiment config is missing a key, has an unknown key, or is invalid.

    ``key`` names the offending dotted key when one is known.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
