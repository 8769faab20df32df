"""Exception hierarchy. Each family maps to a CLI exit code."""


class HFMortError(Exception):
    exit_code = 1


class ConfigError(HFMortError, ValueError):
    """Bad parameters or configuration (exit code 2)."""

    exit_code = 2


class ParameterError(ConfigError):
    pass


class DataError(HFMortError, ValueError):
    """Input data violates a contract (exit code 3)."""

    exit_code = 3


class SchemaMismatchError(DataError):
    pass


class CsvParseError(DataError):
    pass


class StratificationError(DataError):
    pass


class EmptyCohortError(DataError):
    pass


class UnimputableFeatureError(DataError):
    pass


class CoverageError(DataError):
    pass


class ClassError(DataError):
    """Operation needs both outcome classes but got one."""


class DegenerateSampleError(DataError):
    pass


class NotApplicableError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class NumericError(HFMortError, ArithmeticError):
    """Numerical failure (exit code 4)."""

    exit_code = 4


class CalibrationError(NumericError):
    pass


class SearchError(NumericError):
    """Every grid cell failed."""
