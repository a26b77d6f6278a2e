class MecError(Exception):
    """Base class for all package errors."""


class InvalidSpec(MecError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class SingularChain(MecError):
    pass


class SingularMomentSystem(MecError):
    pass


class DegenerateChain(MecError):
    pass


class NoServicePath(MecError):
    pass


class StalledDescent(MecError):
    pass


class NonFinite(MecError):
    def __init__(self, message, iterate=None):
        self.iterate = iterate
        super().__init__(message)


class InvalidConfig(MecError):
    pass
