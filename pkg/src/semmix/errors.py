"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SemmixError(Exception):
    exit_code = 2


class AlignmentError(SemmixError):
    pass


class FormatError(SemmixError):
    pass


class DataError(SemmixError):
    pass


class RemapError(SemmixError):
    pass


class StatisticsError(SemmixError):
    pass


class SelectionError(SemmixError):
    pass


class ConfigError(SemmixError):
    exit_code = 1


class NumericError(SemmixError):
    exit_code = 3


class ModelOutputError(NumericError):
    pass


class LossError(NumericError):
    pass
