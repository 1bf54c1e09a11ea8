"""Exception hierarchy shared by every fedsim module."""


class FedSimError(Exception):
    """Base class for all fedsim errors."""


# comm
class DuplicateHandlerError(FedSimError):
    pass


class ReservedTagError(FedSimError):
    pass


class UnknownMessageTypeError(FedSimError):
    pass


class UnknownReceiverError(FedSimError):
    pass


class MalformedFrameError(FedSimError, ValueError):
    pass


class DeadlockError(FedSimError, RuntimeError):
    """Simulation stalled: no inbox has messages but some worker has not finished."""


# topology
class InvalidSpecError(FedSimError, ValueError):
    pass


class UnknownWorkerError(FedSimError, KeyError):
    pass


class DisconnectedError(FedSimError, ValueError):
    pass


# data
class TooManyClientsError(FedSimError, ValueError):
    pass


class DataIOError(FedSimError, OSError):
    pass


class RaggedRowsError(FedSimError, ValueError):
    def __init__(self, row: int, expected: int, got: int):
        super().__init__(f"row {row}: expected {expected} columns, got {got}")
        self.row = row


class NonNumericCellError(FedSimError, ValueError):
    def __init__(self, row: int, column: int, cell: str):
        super().__init__(f"row {row}, column {column}: not numeric: {cell!r}")
        self.row = row
        self.column = column


# models
class DimensionMismatchError(FedSimError, ValueError):
    pass


class EmptyClientDataError(FedSimError, ValueError):
    pass


# algorithms / robust
class ShapeMismatchError(FedSimError, ValueError):
    pass


class EmptyUpdateSetError(FedSimError, ValueError):
    pass


class TooFewClientsError(FedSimError, ValueError):
    pass


# harness
class ConfigError(FedSimError):
    """Anything that makes a run configuration unusable (CLI exit code 2)."""


class SchemaError(ConfigError, ValueError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


class CrossFieldError(ConfigError, ValueError):
    def __init__(self, fields: tuple[str, ...], message: str):
        super().__init__(f"{' vs '.join(fields)}: {message}")
        self.fields = fields


class FeatureOverlapError(ConfigError, ValueError):
    """Vertical parties claim the same feature column."""


class FeatureGapError(ConfigError, ValueError):
    """A feature column belongs to no vertical party, or a party holds none."""
