"""Exception hierarchy.

Everything raised on purpose by the library derives from ``RemexError``; the
CLI maps ``ConfigError`` subclasses to exit code 2 and every other
``RemexError`` to exit code 3.
"""


class RemexError(Exception):
    pass


class ConfigError(RemexError):
    pass


class UnknownPreset(ConfigError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# core
class DimensionTooLarge(RemexError, ValueError):
    pass


class DimensionMismatch(RemexError, ValueError):
    pass


class PreconditionViolation(RemexError, ValueError):
    pass


# removal
class EmptyBackground(RemexError, ValueError):
    pass


class ProductTooLarge(RemexError, ValueError):
    pass


class DegenerateBounds(RemexError, ValueError):
    pass


class DegenerateColumn(RemexError, ValueError):
    pass


class NotPositiveDefinite(RemexError, ValueError):
    pass


class NoMatchingRows(RemexError, LookupError):
    pass


class MissingCoverage(RemexError, ValueError):
    pass


class MissingSubsetModel(RemexError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# behavior
class IndexOutOfRange(RemexError, IndexError):
    pass


class InvalidDistribution(RemexError, ValueError):
    pass


class EmptyDataset(RemexError, ValueError):
    pass


# summary
class SingularSystem(RemexError, ArithmeticError):
    pass


class Infeasible(RemexError, ValueError):
    pass


class InvalidK(RemexError, ValueError):
    pass


class ZeroSum(RemexError, ArithmeticError):
    pass


class NegativeEntry(RemexError, ValueError):
    pass


# models
class RankDeficient(RemexError, ArithmeticError):
    pass


class NonBinaryLabels(RemexError, ValueError):
    pass


# data
class ParseError(RemexError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaMismatch(RemexError, ValueError):
    pass
