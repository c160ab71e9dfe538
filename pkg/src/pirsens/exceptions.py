"""Exception hierarchy shared by all modules."""


class PirsensError(Exception):
    """Base class for errors raised by pirsens."""


class SingularConditioningSet(PirsensError, ValueError):
    """A covariance block could not be factorized with acceptable pivots."""


class DegenerateDenominator(PirsensError, ZeroDivisionError):
    """A formula would divide by (numerically) zero."""


class RoleMismatch(PirsensError, ValueError):
    """Variable roles are inconsistent with the requested computation."""


class InstrumentMissing(RoleMismatch):
    """An instrument-based quantity was requested without an instrument role."""


class WeakInstrument(PirsensError, ValueError):
    """The first-stage partial correlation is too close to zero."""


class EmptyModel(PirsensError, ValueError):
    """A sensitivity model without any bound."""


class InfeasibleAtCompile(PirsensError, ValueError):
    """A static interval of the compiled model is empty."""


class PreconditionViolated(PirsensError, ValueError):
    """An assumption required by a closed-form result does not hold."""


class DegenerateBca(PirsensError, ValueError):
    """The BCa correction is undefined for the given replicates."""


class ModelInfeasibleOnSample(PirsensError, ValueError):
    """The sensitivity model has an empty feasible set on the full sample."""


class ParseError(PirsensError, ValueError):
    """Malformed input file."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class NonNumericColumn(ParseError):
    pass


class MissingColumn(ParseError):
    pass
