"""Exception hierarchy.

``DataError`` subclasses describe bad or unsupported input (CLI exit code 2);
``NumericError`` subclasses describe numerical failures (CLI exit code 3).
"""


class DrlrtError(Exception):
    pass


class DataError(DrlrtError, ValueError):
    pass


class NumericError(DrlrtError, ArithmeticError):
    pass


class LengthMismatch(DataError):
    pass


class QueryBelowSupport(DataError):
    pass


class FoldQueryBelowSupport(QueryBelowSupport):
    pass


class EmptyInput(DataError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


class SchemaMismatch(DataError):
    pass


class NonPositiveG(DataError):
    pass


class EvaluationUnavailable(DataError):
    pass


class TooFewPoints(DataError):
    pass


class TooFewSamples(DataError):
    pass


class QuantileUnavailable(DataError):
    pass


class BracketFailure(NumericError):
    pass


class DegenerateDesign(NumericError):
    pass


class IdentityViolation(NumericError):
    pass


class EmptyKernelMass(NumericError):
    pass
