"""Exception hierarchy.

The CLI maps these onto exit codes: configuration problems exit with 2,
data problems with 3 and numerical failures with 4.
"""


class CohortMatcherError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(CohortMatcherError):
    exit_code = 2


class DataError(CohortMatcherError):
    exit_code = 3


class SchemaError(DataError):
    """Input file does not match the declared schema."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class IntegrityError(DataError):
    """Duplicate or inconsistent records."""


class CodingError(DataError):
    """A raw survey response could not be mapped onto a coded outcome."""

    def __init__(self, subject_id, outcome, value):
        super().__init__(
            f"subject {subject_id!r}: unknown response {value!r} for outcome {outcome!r}"
        )
        self.subject_id = subject_id
        self.outcome = outcome
        self.value = value


class NumericalError(CohortMatcherError):
    exit_code = 4


class RankDeficientError(NumericalError):
    def __init__(self, columns):
        super().__init__(f"design matrix is rank deficient; dependent columns: {list(columns)}")
        self.columns = list(columns)


class DegenerateResponseError(NumericalError):
    """Binary response with no variation."""


class InfeasibleMatchError(NumericalError):
    pass


class PipelineError(CohortMatcherError):
    """Wraps a failure with the pipeline stage that raised it."""

    def __init__(self, module, context, cause):
        super().__init__(f"[{module}] {context}: {cause}")
        self.module = module
        self.context = context
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
