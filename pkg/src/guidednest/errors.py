class GuidedNestError(Exception):
    """Base class for user-facing errors."""


class ParseError(GuidedNestError):
    def __init__(self, message, lineno=None):
        super().__init__(message)
        self.lineno = lineno


class SchemaError(GuidedNestError):
    pass


class EmptyInputError(GuidedNestError):
    pass


class AmbiguityError(GuidedNestError):
    def __init__(self, message, code=None):
        super().__init__(message)
        self.code = code


class ParameterError(GuidedNestError, ValueError):
    pass


class ConfigurationError(GuidedNestError):
    pass


class DegenerateFitError(GuidedNestError):
    pass


class InsufficientDataError(GuidedNestError):
    pass


class DegenerateDocumentError(GuidedNestError):
    pass


class UndefinedAgeError(GuidedNestError):
    pass


class ZeroMassError(GuidedNestError):
    pass


class UndefinedMetricError(GuidedNestError):
    pass


class CompatibilityError(GuidedNestError):
    pass


class CheckpointError(GuidedNestError):
    pass


class ConsistencyError(AssertionError):
    """Sufficient statistics disagree with assignments; indicates a bug."""
