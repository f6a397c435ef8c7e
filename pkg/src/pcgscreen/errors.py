"""Exception hierarchy shared by every pcgscreen module."""


class PCGError(Exception):
    """Base class for all pcgscreen errors."""


# signal_io
class NotWav(PCGError, ValueError):
    pass


class UnsupportedEncoding(PCGError, ValueError):
    pass


class TruncatedFile(PCGError, ValueError):
    pass


class MalformedHeader(PCGError, ValueError):
    pass


class UnknownLabel(PCGError, ValueError):
    """Raised for patients whose murmur status is Unknown; callers skip them."""


class MissingAudio(PCGError, FileNotFoundError):
    pass


class InsufficientPatients(PCGError, ValueError):
    pass


# dsp
class InvalidCutoff(PCGError, ValueError):
    pass


class NonIntegerFactor(PCGError, ValueError):
    pass


class EmptySignal(PCGError, ValueError):
    pass


# autodiff
class ShapeMismatch(PCGError, ValueError):
    pass


class NonDistribution(PCGError, ValueError):
    pass


# model
class ConfigInvalid(PCGError, ValueError):
    pass


class FingerprintMismatch(PCGError, ValueError):
    pass


class CorruptFile(PCGError, ValueError):
    pass


# train
class MissingClass(PCGError, ValueError):
    pass


class EmptyDataset(PCGError, ValueError):
    pass


# evaluate
class EmptyGroup(PCGError, ValueError):
    pass


class LengthMismatch(PCGError, ValueError):
    pass


class SingleClass(PCGError, ValueError):
    pass


class EmptySite(PCGError, ValueError):
    pass


# synth
class InvalidSpec(PCGError, ValueError):
    pass
