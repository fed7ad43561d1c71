"""Exception hierarchy. Each class carries a distinct CLI exit code."""


class StreamvocError(Exception):
    code = 1
    kind = "error"


class InvalidConfigError(StreamvocError, ValueError):
    code = 2
    kind = "invalid_config"


class TooShortError(StreamvocError, ValueError):
    code = 3
    kind = "too_short"


class ShapeError(StreamvocError, ValueError):
    code = 4
    kind = "shape"


class ContractError(StreamvocError, RuntimeError):
    code = 5
    kind = "contract"


class InvalidParameterError(StreamvocError, ValueError):
    code = 6
    kind = "invalid_parameter"


class ModeError(StreamvocError, ValueError):
    code = 7
    kind = "mode"


class DegenerateInputError(StreamvocError, ValueError):
    code = 8
    kind = "degenerate_input"


class IntegrityError(StreamvocError, IOError):
    code = 9
    kind = "integrity"


class FormatError(StreamvocError, ValueError):
    """Malformed MEL1, WAV or weight-store file."""

    code = 10
    kind = "format"


class DivergenceError(StreamvocError, FloatingPointError):
    code = 11
    kind = "divergence"


class MissingFileError(StreamvocError, FileNotFoundError):
    code = 12
    kind = "missing_file"
