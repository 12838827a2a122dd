"""Exception hierarchy. Each family maps to a CLI exit code."""


class TactilePriorError(Exception):
    exit_code = 1


class ConfigError(TactilePriorError, ValueError):
    exit_code = 1


class ShapeError(TactilePriorError, ValueError):
    exit_code = 2


class DomainError(TactilePriorError, ValueError):
    exit_code = 3


class ContractError(TactilePriorError, RuntimeError):
    exit_code = 1


class DataError(TactilePriorError, ValueError):
    exit_code = 2


class GeometryError(DataError):
    pass


class ValidationError(DataError):
    pass


class NumericError(TactilePriorError, ArithmeticError):
    exit_code = 3


class CheckpointError(DataError):
    pass
