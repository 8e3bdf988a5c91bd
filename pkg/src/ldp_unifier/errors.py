"""Exception hierarchy shared by every ldp_unifier module."""


class UnifierError(Exception):
    pass


class DomainError(UnifierError, ValueError):
    """A precondition on an argument does not hold."""


class SingularChannelError(UnifierError):
    """A channel (or average channel) that must be inverted is singular."""


class EstimationError(UnifierError):
    pass


class EstimatorMismatchError(UnifierError):
    """The estimator cannot be applied to the given mechanism."""


class LinearProgramError(UnifierError):
    def __init__(self, message: str, status: str):
        super().__init__(message)
        self.status = status


class IngestError(UnifierError):
    pass


class ConfigError(UnifierError):
    pass
