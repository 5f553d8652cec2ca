"""
Custom exceptions for dymgnn
"""


class DYMException(Exception):
    """Base exception for dymgnn"""
    pass


class DimensionException(DYMException):
    """Exception raised when matrix or window shapes do not align"""
    pass


class NumericException(DYMException):
    """Exception raised when a computation produces NaN or Inf"""
    pass


class DYMInternalError(DYMException):
    """Exception raised when an internal invariant is broken"""
    pass


class ConfigException(DYMException):
    """Exception raised for invalid configuration or model settings"""
    pass


class DataException(DYMException):
    """Exception raised for malformed or unusable input data"""
    pass


class CheckpointException(DYMException):
    """Exception raised when a checkpoint cannot be read or written"""
    pass


class ChecksumException(CheckpointException):
    """Exception raised when a checkpoint fails checksum verification"""
    pass


class VersionException(CheckpointException):
    """Exception raised for an unsupported checkpoint format version"""
    pass


class LockTimeoutException(DYMException):
    """Exception raised when an output directory lock cannot be acquired"""
    pass


class LedgerException(DYMException):
    """Exception raised when the run ledger database is unavailable"""
    pass
