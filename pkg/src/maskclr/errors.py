"""Exception hierarchy shared by every subpackage."""


class MaskCLRError(Exception):
    pass


class ShapeError(MaskCLRError, ValueError):
    pass


class AxisError(MaskCLRError, ValueError):
    pass


class ContractError(MaskCLRError, RuntimeError):
    pass


class ConfigError(MaskCLRError, ValueError):
    pass


class ParameterError(MaskCLRError, ValueError):
    pass


class BatchSizeError(MaskCLRError, ValueError):
    pass


class FormatError(MaskCLRError, ValueError):
    """File does not follow the expected container layout."""


class UnsupportedFormatError(FormatError):
    """Well-formed file using an encoding we do not decode."""


class CorruptionError(FormatError):
    """Truncated file or checksum mismatch."""


class TooShortError(MaskCLRError, ValueError):
    pass


class TaskError(MaskCLRError, ValueError):
    pass


class DataError(MaskCLRError, RuntimeError):
    pass
