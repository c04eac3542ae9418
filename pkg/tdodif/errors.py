class TdodifError(Exception):
    pass


class ConfigurationError(TdodifError, ValueError):
    """Invalid parameters, configuration files or manifest wiring."""


class FormatError(TdodifError, ValueError):
    """An artifact on disk does not follow its container format."""
