"""Exception hierarchy shared by every distprobe module."""


class DistProbeError(Exception):
    """Base class for all library errors."""


class ContractError(DistProbeError, ValueError):
    """A precondition on an argument was violated."""


class DimensionError(ContractError):
    pass


class BoundsError(ContractError):
    pass


class SpecError(ContractError):
    pass


class PSDError(ContractError):
    pass


class NumericConsistencyError(DistProbeError, ArithmeticError):
    pass


class FormatError(DistProbeError, ValueError):
    pass


class DataError(DistProbeError, ValueError):
    pass


class TrainingError(DistProbeError, RuntimeError):
    pass
