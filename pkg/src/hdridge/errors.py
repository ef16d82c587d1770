"""Exception hierarchy shared by every hdridge module."""


class HdRidgeError(Exception):
    """Base class for all errors raised by hdridge."""


class DimensionMismatch(HdRidgeError, ValueError):
    pass


class NonPositiveDefinite(HdRidgeError, ValueError):
    pass


class InvalidBlock(HdRidgeError, ValueError):
    """A block specification violates its parameter invariants."""


class DegenerateColumn(HdRidgeError, ValueError):
    pass


class InvalidSparsity(HdRidgeError, ValueError):
    pass


class ZeroGeneticVariance(HdRidgeError, ValueError):
    pass


class SolveFailure(HdRidgeError, ArithmeticError):
    pass


class BadGrouping(HdRidgeError, ValueError):
    pass


class RankDeficient(HdRidgeError, ValueError):
    pass


class NoRoot(HdRidgeError, ArithmeticError):
    pass


class ToleranceNotMet(HdRidgeError, ArithmeticError):
    pass


class DivisionDegenerate(HdRidgeError, ArithmeticError):
    pass


class ZeroPrediction(HdRidgeError, ArithmeticError):
    """Prediction vector is numerically zero, so A^2 is undefined."""


class ParseError(HdRidgeError, ValueError):
    pass


class ValidationError(HdRidgeError, ValueError):
    """Carries every violated invariant, not just the first one."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
