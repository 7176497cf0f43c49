"""Exception hierarchy for robust_vrft."""


class ControlError(Exception):
    """Base class for all errors raised by this package."""


class PoleOnUnitCircle(ControlError):
    pass


class DegenerateLoop(ControlError):
    pass


class NotInvertible(ControlError):
    pass


class IntegratorError(ControlError):
    """Raised when a quantity is requested at z=1 and the system has a pole there."""


class UnstableError(ControlError):
    pass


class ZeroPower(ControlError):
    pass


class NotProper(ControlError):
    pass


class EstimationFailed(ControlError):
    pass


class DegenerateIR(ControlError):
    pass


class SingularRegressor(ControlError):
    pass


class AlternationDiverged(ControlError):
    pass


class NotSettled(ControlError):
    pass


class UnstableExperiment(ControlError):
    pass
