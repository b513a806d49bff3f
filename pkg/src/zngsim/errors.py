"""Exception hierarchy. Every error names the module that raised it."""


class ZngError(Exception):
    module = "zngsim"

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class ConfigError(ZngError, ValueError):
    module = "config"


class TraceFormatError(ZngError, ValueError):
    """Malformed trace record. ``index`` is the record (or line) number."""

    module = "trace"

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"record {index}: {message}")
        self.index = index


class TraceValidationError(TraceFormatError):
    pass


class PageFault(ZngError):
    module = "ftl"


class ConsistencyError(ZngError, RuntimeError):
    module = "ftl"


class CapacityExhausted(ZngError, RuntimeError):
    module = "gc"


class GcRequired(ZngError):
    """Raised by the flash array when a log block has no free page left."""

    module = "znand"

    def __init__(self, plbn):
        super().__init__(f"log block {plbn} is full")
        self.plbn = plbn
