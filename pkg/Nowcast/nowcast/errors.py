class NowcastError(Exception):
    """ Base class for every error raised by the nowcasting package """


class InputError(NowcastError, ValueError):
    """ Malformed files, unknown names, out-of-range weeks or invalid configuration """


class DataError(NowcastError, ValueError):
    """ Surveillance data that contradicts itself or leaves nothing to train on """


class ParameterError(NowcastError, ValueError):
    pass


class MetricError(NowcastError, ValueError):
    pass


class FitError(NowcastError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
