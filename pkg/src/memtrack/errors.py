"""Exception hierarchy. Each class maps to one CLI exit code."""


class MemTrackError(Exception):
    exit_code = 1


class ConfigError(MemTrackError, ValueError):
    """Invalid configuration or parameters."""
    exit_code = 1


class LoadError(MemTrackError, OSError):
    """A file is missing, unreadable, or inconsistent with its siblings."""
    exit_code = 2


class NumericalError(MemTrackError, ArithmeticError):
    exit_code = 3


class FormatError(MemTrackError, ValueError):
    """A delimited file does not follow its documented format."""
    exit_code = 4

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ''
        if path is not None:
            where = str(path)
            if line is not None:
                where += f':{line}'
            where += ': '
        super().__init__(where + message)
