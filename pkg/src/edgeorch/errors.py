"""Exception hierarchy shared by all edgeorch modules."""


class EdgeOrchError(Exception):
    """Base class for every error raised by this package."""


# sim core
class SchedulingInPast(EdgeOrchError):
    pass


class UnknownTopic(EdgeOrchError, KeyError):
    pass


# emulator / shared
class InvalidFleetConfig(EdgeOrchError, ValueError):
    pass


class UnknownNode(EdgeOrchError, KeyError):
    pass


# monitoring
class MalformedReport(EdgeOrchError, ValueError):
    pass


class ConflictingReport(EdgeOrchError):
    pass


class InsufficientHistory(EdgeOrchError):
    pass


class ModelUnavailable(EdgeOrchError):
    pass


# predictor
class WindowTooShort(EdgeOrchError, ValueError):
    pass


class EmptySequence(EdgeOrchError, ValueError):
    pass


class DimensionMismatch(EdgeOrchError, ValueError):
    pass


class EmptyBatch(EdgeOrchError, ValueError):
    pass


class EmptyDataset(EdgeOrchError, ValueError):
    pass


class InvalidHyper(EdgeOrchError, ValueError):
    pass


class WrongWindowLength(EdgeOrchError, ValueError):
    pass


class NodeOrderMismatch(EdgeOrchError, ValueError):
    pass


class CorruptModelFile(EdgeOrchError):
    pass


class VersionMismatch(EdgeOrchError):
    pass


# decision engine
class NodeNotEligible(EdgeOrchError):
    pass


class NoFeasibleNode(EdgeOrchError):
    pass


class DestinationLost(EdgeOrchError):
    pass


# harness
class InvalidConfig(EdgeOrchError, ValueError):
    pass


class MisalignedSeries(EdgeOrchError, ValueError):
    pass
