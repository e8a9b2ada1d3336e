"""Exception hierarchy.

Every error raised on bad input data derives from :class:`DataError` so the
command line can map it to a single exit status.
"""


class LongitrackError(Exception):
    """Base class for all package errors."""


class DataError(LongitrackError):
    """Input data is malformed or unsuitable for the requested operation."""


class MalformedWav(DataError):
    pass


class UnsupportedEncoding(DataError):
    pass


class EmptyAfterTrim(DataError):
    pass


class DegenerateSignal(DataError):
    pass


class TooShort(DataError):
    pass


class ManifestParse(DataError):
    pass


class MissingAudio(DataError):
    pass


class InsufficientParticipants(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class TraceMismatch(LongitrackError):
    pass


class CorruptCheckpoint(DataError):
    pass


class EmptyPartition(DataError):
    pass


class SingleClass(DataError):
    """Metric needs both classes but only one is present."""


class ConstantInput(DataError):
    """Correlation is undefined for a constant series."""


class RankDeficient(LongitrackError):
    pass


class WindowEmpty(DataError):
    pass


class NoHistory(DataError):
    pass


class TooFewSamples(DataError):
    pass


class ConfigError(DataError):
    pass


class IoFailure(LongitrackError):
    pass
