"""Exception hierarchy shared by every stage.

Each class carries the process exit code the CLI maps it to.
"""


class ConnLatentError(Exception):
    exit_code = 1


class ConfigError(ConnLatentError, ValueError):
    exit_code = 2


class DataError(ConnLatentError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.path = path


class ShapeError(DataError):
    pass


class TrainingError(ConnLatentError, RuntimeError):
    exit_code = 4


class EvaluationError(ConnLatentError, RuntimeError):
    exit_code = 5
