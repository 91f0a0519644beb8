"""Exception hierarchy shared by every subsystem."""


class FedSTGDError(Exception):
    """Base class for all package errors."""


class ShapeError(FedSTGDError, ValueError):
    pass


class ConfigError(FedSTGDError, ValueError):
    pass


class NumericError(FedSTGDError, ArithmeticError):
    pass


class UsageError(FedSTGDError, RuntimeError):
    pass


class ProtocolError(FedSTGDError, RuntimeError):
    pass


class ProtocolTimeout(ProtocolError):
    pass


class ProtocolAbort(ProtocolError):
    pass


class PeerClosed(ProtocolError):
    pass


class DecodeError(FedSTGDError, ValueError):
    """Malformed frame. Subclasses name the failure kind."""


class BadMagic(DecodeError):
    pass


class BadVersion(DecodeError):
    pass


class BadCRC(DecodeError):
    pass


class Truncated(DecodeError):
    pass


class PayloadMismatch(DecodeError):
    pass


class DataError(FedSTGDError, ValueError):
    pass


class MissingCell(DataError):
    pass


class DuplicateCell(DataError):
    pass


class OrderingError(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class PartitionError(DataError):
    pass


class SplitTooShort(DataError):
    pass


class UndefinedMetric(FedSTGDError, ValueError):
    pass
