"""Exception hierarchy shared by every stage of the pipeline."""


class VaupipeError(Exception):
    """Base class; the CLI maps these to exit codes."""


class MissingComponent(VaupipeError):
    pass


class SchemaViolation(VaupipeError):
    pass


class ValueOutOfRange(VaupipeError):
    pass


class EmptyInput(VaupipeError):
    pass


class EmptyMiningResult(VaupipeError):
    pass


class DegenerateToken(VaupipeError):
    pass


class DegenerateLabels(VaupipeError):
    pass


class IoError(VaupipeError, OSError):
    pass
