"""Exception hierarchy shared by all eltrap modules."""


class EltrapError(Exception):
    """Base class; ``module`` names where the failure originated."""

    module = "eltrap"

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class PhysicsError(EltrapError):
    """Physical precondition violated (unstable trap, bad step, ...)."""


class InvalidDriveError(PhysicsError):
    module = "mathieu"


class InstabilityError(PhysicsError):
    module = "mathieu"

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class ResolutionError(PhysicsError):
    """Integration step too coarse for the dynamics being resolved."""

    def __init__(self, message, module="eltrap", time=None):
        super().__init__(message)
        self.module = module
        self.time = time


class NoOscillationError(PhysicsError):
    module = "mathieu"


class OutOfRangeError(PhysicsError):
    module = "potential"


class FitError(EltrapError):
    """A fit did not converge or the data carry no usable signal."""

    def __init__(self, message, module="analysis"):
        super().__init__(message)
        self.module = module


class ParameterError(EltrapError, ValueError):
    module = "analysis"


class ProgramError(EltrapError, ValueError):
    module = "sequence"


class ConfigError(EltrapError):
    module = "config"

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
