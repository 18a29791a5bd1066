"""Exception hierarchy shared by every stage of the pipeline.

main.py maps the three operator-facing families to exit codes:
ConfigError -> 1, DataError -> 2, NumericAbort -> 3.
"""


class FieldSelectionError(Exception):
    """Base class for all errors raised by this package"""


class DimensionError(FieldSelectionError, ValueError):
    """Shapes of two operands do not fit together"""


class DegenerateBatchError(FieldSelectionError, ValueError):
    """Batch statistics are undefined (training-mode batch norm with one row)"""


class DegenerateSelectionError(FieldSelectionError, ValueError):
    """Selected importance scores cannot be L1-normalized, or indices are invalid"""


class NumericError(FieldSelectionError, ValueError):
    """A NaN or infinite value reached a numeric kernel"""


class NumericAbort(FieldSelectionError, RuntimeError):
    """Training produced a non-finite loss and was stopped"""


class DataError(FieldSelectionError):
    """Input data is missing, malformed or too small"""


class ParseError(DataError, ValueError):
    """A raw token could not be parsed"""


class ConfigError(FieldSelectionError):
    """A configuration key or value is invalid"""


class UndefinedMetricError(FieldSelectionError, ValueError):
    """A metric is undefined for the given input (single class, zero variance)"""


EXIT_CODES = {
    ConfigError: 1,
    DataError: 2,
    NumericAbort: 3,
}


def exit_code_for(error: BaseException) -> int:
    for error_type, code in EXIT_CODES.items():
        if isinstance(error, error_type):
            return code
    return 4
