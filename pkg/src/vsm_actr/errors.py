"""Exception types shared across the package."""


class VsmError(Exception):
    """Base class for all errors raised by this package."""


# -- symbolic memory ---------------------------------------------------------

class DuplicateSlot(VsmError):
    pass


class MissingRequiredSlot(VsmError):
    pass


class BufferBusy(VsmError):
    pass


# -- production engine -------------------------------------------------------

class EmptyConflictSet(VsmError):
    pass


class ActionOnBusyBuffer(BufferBusy):
    """A production action tried to write a buffer whose previous write is pending."""


class Deadlock(VsmError):
    """No production matches and no buffer event is pending.

    Carries a snapshot of the buffer contents at the time of the stall.
    """

    def __init__(self, message: str, buffers: dict | None = None):
        super().__init__(message)
        self.buffers = buffers or {}


class StepLimitExceeded(VsmError):
    pass


# -- task layer --------------------------------------------------------------

class ReductionExceedsCycle(VsmError):
    pass


# -- trace codec -------------------------------------------------------------

class MalformedTimestamp(VsmError):
    pass


class TruncatedUtilityBlock(VsmError):
    pass


# -- feature lab -------------------------------------------------------------

class ProviderUnavailable(VsmError):
    pass


class DimensionMismatch(VsmError):
    pass


class AllZeroVariance(VsmError):
    pass


class RankDeficient(VsmError):
    pass


class MixedDims(VsmError):
    pass


class SingularScatter(VsmError):
    pass


# -- dataset builder ---------------------------------------------------------

class FeatureCountMismatch(VsmError):
    pass


class ClassTooSmall(VsmError):
    pass


class IoFailure(VsmError):
    pass


# -- probe eval --------------------------------------------------------------

class DegenerateFold(VsmError):
    pass
