"""Exception hierarchy shared by every module.

``exit_code`` is what the command-line front end returns when the error
escapes a subcommand.
"""


class GraphCondenseError(Exception):
    exit_code = 1


class DimensionError(GraphCondenseError, ValueError):
    """Operand shapes are incompatible."""


class ValidationError(GraphCondenseError, ValueError):
    """An input violates a documented precondition."""


class InfeasibleError(ValidationError):
    """The requested condensed size cannot satisfy the per-class constraints."""


class CapabilityError(GraphCondenseError, NotImplementedError):
    """The requested architecture/depth is not supported on this code path."""


class NumericError(GraphCondenseError, ArithmeticError):
    """A computation produced NaN or infinity."""


class DivergenceError(NumericError):
    exit_code = 3

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConfigError(GraphCondenseError, ValueError):
    exit_code = 2


class DatasetError(ValidationError):
    """A dataset or artifact directory is malformed.

    ``code`` identifies the failure class (``missing_file``, ``count_mismatch``,
    ``index_out_of_range``, ``label_out_of_range``, ``parse_error``,
    ``asymmetric``) so callers can branch without parsing messages.
    """

    exit_code = 2

    def __init__(self, code, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(f"{code}: {message}{where}")
        self.code = code
        self.path = path
        self.line = line
