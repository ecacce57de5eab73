"""Exception hierarchy. The CLI maps these onto exit codes."""


class LabError(Exception):
    exit_code = 1


class ConfigError(LabError):
    exit_code = 2


class DomainError(LabError, ValueError):
    exit_code = 3


class SingularityError(LabError, ValueError):
    exit_code = 3


class GeometryError(LabError):
    exit_code = 3


class PreconditionError(LabError):
    exit_code = 3


class DegenerateError(LabError):
    exit_code = 3


class SpectralError(LabError):
    exit_code = 3

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class ConvergenceError(LabError):
    exit_code = 4

    def __init__(self, message, last_state=None, history=None):
        super().__init__(message)
        self.last_state = last_state
        self.history = list(history or [])
