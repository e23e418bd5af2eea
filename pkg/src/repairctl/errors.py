"""Exception types raised by the solvers and synthesis routines."""


class RepairCtlError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(RepairCtlError, ValueError):
    pass


class IncompatibleGridsError(RepairCtlError, ValueError):
    pass


class SingularTargetError(RepairCtlError, ValueError):
    """Target density vanishes somewhere it has to stay positive."""


class StepSizeError(RepairCtlError, ValueError):
    """Time step too coarse for the grid or the transport delay."""


class InvalidTrajectoryError(RepairCtlError, ValueError):
    pass


class FitUnreliableError(RepairCtlError):
    """Decay fit rejected; the partial fit is kept on ``.fit``."""

    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class VanishingDataWarning(UserWarning):
    """Initial density vanishes on an interval; ``g p1`` there is evaluated
    as a ratio whose accuracy is not established."""
