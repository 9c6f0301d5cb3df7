"""Exception types shared across the package."""


class ReachgenError(Exception):
    """Base class for domain errors (the CLI maps these to exit status 1)."""


class Unreachable(ReachgenError):
    pass


class SingularConfiguration(ReachgenError):
    pass


class DomainError(ReachgenError, ValueError):
    pass


class NumericalBlowup(ReachgenError):
    pass


class Infeasible(ReachgenError):
    pass


class InfeasibleStep(Infeasible):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"torque at step {step} is outside the achievable set")


class NotConverged(ReachgenError):
    """Raised by strict solves; ``result`` carries the best iterate found."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SamplingExhausted(ReachgenError):
    pass


class DimensionMismatch(ReachgenError, ValueError):
    pass


class NonFiniteLoss(ReachgenError):
    pass


class FormatError(ReachgenError):
    def __init__(self, message, path=None, line=None, column=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
                if column is not None:
                    loc += f":{column}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line
        self.column = column


class ChecksumMismatch(ReachgenError):
    pass


class VersionMismatch(ReachgenError):
    pass


class ConfigError(Exception):
    """Usage or configuration problem (exit status 2)."""
