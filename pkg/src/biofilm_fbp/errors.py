"""Exception hierarchy for the solver library."""


class SolverError(Exception):
    """Base class for all solver errors."""


class DegenerateTime(SolverError):
    """Kernel evaluated at t <= tau outside a declared limit mode."""


class SingularAtOrigin(SolverError):
    """Guarded exponential ratio requested at x = 0, delta = 0."""


class NonParabolic(SolverError):
    """Diffusion coefficient not strictly positive."""


class SeriesDivergence(SolverError):
    """Correction-series terms fail to decrease on the probe lattice."""


class NegativeState(SolverError):
    """Concentration below the repairable tolerance."""


class JacobianCollapse(SolverError):
    """Characteristic map Jacobian lost positivity."""


class NonPhysicalState(SolverError):
    """State violates a structural invariant (e.g. volume-fraction sum)."""


class ExtinctionReached(SolverError):
    """Biofilm thickness fell below the configured minimum."""


class BoundaryOutsideDomain(SolverError):
    """Free boundary left the material domain under detachment."""


class DiagonalDegeneracy(SolverError):
    """Scalar coefficient of the implicit boundary-density solve vanished."""


class HistoryGap(SolverError):
    """Boundary-density history missing samples before the requested time."""


class NonPhysicalRobin(SolverError):
    """Robin transfer coefficient must be positive."""


class NonContraction(SolverError):
    """Inner iteration exhausted without meeting the tolerance."""


class ProfileUnavailable(SolverError):
    """Restart requested at a time with no evaluable profile."""


class CFLViolation(SolverError):
    """Advective stability limit exceeded in the finite-difference path."""


class DataNotC1(SolverError):
    """Certificate requires differentiable initial/boundary data."""


class ParseError(SolverError):
    """Config text could not be parsed; carries line/column."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", col {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ValidationError(SolverError):
    """Config parsed but a key/value is invalid; carries the key name."""

    def __init__(self, key, message=""):
        super().__init__(f"{key}: {message}" if message else str(key))
        self.key = key


class IoError(SolverError):
    """Output could not be written."""
