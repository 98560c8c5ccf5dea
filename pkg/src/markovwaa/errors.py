"""Exception hierarchy shared across the package."""


class MarkovWaaError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(MarkovWaaError, ValueError):
    pass


class DomainError(MarkovWaaError, ValueError):
    """A point lies outside the space it was declared to belong to."""


class UnsupportedError(MarkovWaaError):
    pass


class ResourceLimitError(MarkovWaaError):
    pass


class SequencingError(MarkovWaaError):
    """Engine rounds were driven out of order."""


class ContractError(MarkovWaaError):
    pass


class InsufficientDataError(MarkovWaaError):
    pass


class ConfigError(MarkovWaaError):
    pass


class InvariantViolation(MarkovWaaError):
    """A checked inequality failed during a run."""

    def __init__(self, check, round_index, detail=""):
        self.check = check
        self.round_index = round_index
        self.detail = detail
        msg = f"{check} violated at round {round_index}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
