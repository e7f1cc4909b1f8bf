"""Exception hierarchy.  Each class carries a stable ``code`` used by the CLI."""


class OptGError(Exception):
    code = "E_OPTG"
    exit_code = 1


class DimensionError(OptGError, ValueError):
    code = "E_DIMENSION"


class InputError(OptGError, ValueError):
    code = "E_INPUT"


class StateError(OptGError, RuntimeError):
    code = "E_STATE"


class ConfigError(OptGError, ValueError):
    code = "E_CONFIG"
    exit_code = 2

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class FormatError(OptGError, ValueError):
    """Malformed dataset file; ``offset`` is the byte position of the problem."""

    code = "E_FORMAT"
    exit_code = 3

    def __init__(self, message, offset=None):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})" if offset is not None else message)


class FileError(OptGError, OSError):
    code = "E_FILE"
    exit_code = 3


class LoadError(OptGError):
    code = "E_LOAD"
    exit_code = 4


class TrainingDivergedError(OptGError, FloatingPointError):
    code = "E_DIVERGED"
    exit_code = 5

    def __init__(self, epoch, iteration, value=None):
        self.epoch = epoch
        self.iteration = iteration
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, iteration {iteration}")
