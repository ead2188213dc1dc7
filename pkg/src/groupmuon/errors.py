"""Exception types shared across the package."""


class GroupMuonError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(GroupMuonError):
    """An operand violates a precondition (non-finite entries, shape mismatch)."""


class NumericalFailureError(GroupMuonError):
    """A numerical routine failed to converge or produced non-finite values."""


class InvalidConfigurationError(GroupMuonError):
    """A configuration value is inconsistent (e.g. group size not dividing head count)."""


class InvalidPartitionError(GroupMuonError):
    """A row partition does not cover the target matrix exactly."""


class ConfigFileError(GroupMuonError):
    """A run or sweep config file failed to parse or validate."""


class DivergedError(GroupMuonError):
    """Training loss became non-finite or exceeded the divergence guard."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss!r})")
        self.step = step
        self.loss = loss
