"""Exception hierarchy shared by all modules."""


class CocycleError(ValueError):
    """Base class for recoverable numerical and configuration failures."""


class SingularFiberError(CocycleError):
    pass


class RankCollapseError(CocycleError):
    pass


class CapExceeded(CocycleError):
    """A word, coefficient or exterior-size cap would be exceeded."""


class ConfigError(CocycleError):
    pass


class NoContractionFound(CocycleError):
    pass


class DomainError(CocycleError):
    """Complex weights fall outside the admissible domain."""


class InvarianceError(CocycleError):
    def __init__(self, message, defect=None):
        super().__init__(message)
        self.defect = defect
