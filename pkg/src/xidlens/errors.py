"""Exception hierarchy. The CLI maps each class to a distinct exit code."""


class XidlensError(Exception):
    exit_code = 1


class UsageError(XidlensError):
    exit_code = 2


class ConfigError(XidlensError):
    exit_code = 3


class DataError(XidlensError):
    """Input data violates an ordering or consistency requirement."""

    exit_code = 4


class UnsortedInputError(DataError):
    pass


class DataInconsistencyError(DataError):
    pass
