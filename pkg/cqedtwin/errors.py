"""
Exceptions raised throughout the cqedtwin package.

Everything derives from TwinError so that callers (the command line front end in particular) can separate problems
with the inputs they were handed from failures of the device or of a calibration.
"""


class TwinError(Exception):
    pass


class InputError(TwinError, ValueError):
    pass


class ConfigError(InputError):
    """
    A configuration document violated its schema.

    Args:
        message (str): What was wrong
        path (str): The file the problem was found in, if any
        line (int): The 1-based line of the offending key, if it could be located
    """
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        location = ''
        if path is not None:
            location = str(path)
            if line is not None:
                location += ':' + str(line)
            location += ': '
        super().__init__(location + message)


class IntegrationError(TwinError):
    pass


class FitError(TwinError):
    pass


class CalibrationError(TwinError):
    pass


class GraphError(TwinError):
    pass
