"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
2 for input/configuration problems, 3 for numeric degeneracy.
"""


class NrweError(Exception):
    exit_code = 3


class InputError(NrweError):
    exit_code = 2


class NumericError(NrweError):
    exit_code = 3


# -- input / configuration ---------------------------------------------------

class DimensionMismatch(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifier(ParseError):
    pass


class FingerprintMismatch(InputError):
    pass


class UnsupportedDimension(InputError):
    pass


class ConfigError(InputError):
    pass


# -- numeric -----------------------------------------------------------------

class SingularDesign(NumericError):
    pass


class DegenerateTreatment(NumericError):
    pass


class TooFewObservations(NumericError):
    pass


class SparseCell(NumericError):
    def __init__(self, message, cells=()):
        super().__init__(message)
        self.cells = list(cells)


class DegenerateCell(NumericError):
    def __init__(self, message, cells=()):
        super().__init__(message)
        self.cells = list(cells)


class InvalidScale(NumericError):
    pass


class NegativeWeight(NumericError):
    pass


class DomainError(NumericError):
    pass


class DegenerateDensity(NumericError):
    pass


class SupportViolation(NumericError):
    pass


class ProjectionFailure(NumericError):
    pass


class ReplicationFailure(NumericError):
    def __init__(self, index, cause):
        super().__init__(f"replication {index} failed: {type(cause).__name__}: {cause}")
        self.index = index
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
