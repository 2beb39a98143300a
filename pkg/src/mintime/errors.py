"""Exception hierarchy shared by the solver, estimators and command line."""


class MintimeError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(MintimeError, ValueError):
    """Invalid parameters, malformed scenario files or bad overrides."""

    exit_code = 2


class CFLError(ConfigError):
    """Time step larger than the admissible bound for the grid."""


class DomainError(MintimeError, ValueError):
    """A query point lies outside the computational grid."""

    exit_code = 2


class SolverBudgetError(MintimeError):
    """The fixed-point iteration did not reach its tolerance."""

    exit_code = 3

    def __init__(self, message, residual=None, sweeps=None):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps


class InsufficientSamplingError(MintimeError):
    """Too few cloud points near a base point to estimate a normal cone."""

    exit_code = 4


class DegenerateCostateError(MintimeError, ValueError):
    """A costate equal to zero was passed where a nonzero one is required."""

    exit_code = 2


class CostateCollapseError(MintimeError):
    """The costate norm dropped below the collapse threshold mid-integration."""

    exit_code = 4

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time
