"""Exception hierarchy.

Errors split into two families that the command line maps to exit codes:
``DataError`` (bad or inconsistent input, exit 3) and ``NumericError``
(a computation failed to produce a finite/convergent result, exit 4).
"""


class IcdfsError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DataError(IcdfsError):
    exit_code = 3


class NumericError(IcdfsError):
    exit_code = 4


# tree / ingestion
class MalformedRow(DataError):
    pass


class UnknownParent(DataError):
    pass


class DuplicateCode(DataError):
    pass


class CycleDetected(DataError):
    pass


class UnknownCode(DataError, KeyError):
    def __str__(self):  # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class InconsistentDates(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class SingleClassTrain(DataError):
    pass


class TooFewNodes(DataError):
    pass


class EmptyGraph(DataError):
    pass


class BatchTooSmall(DataError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


# numerics
class CalibrationFailure(NumericError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConvergenceFailure(NumericError):
    pass


class EmptyCluster(NumericError):
    pass
