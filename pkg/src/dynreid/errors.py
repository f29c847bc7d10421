"""Exception hierarchy shared by every module."""


class DynReidError(Exception):
    pass


class ShapeMismatch(DynReidError, ValueError):
    pass


class DegenerateOutput(DynReidError, ValueError):
    pass


class BatchTooSmall(DynReidError, ValueError):
    pass


class NotScalar(DynReidError, ValueError):
    pass


class DetachedLoss(DynReidError, ValueError):
    pass


class KernelCountMismatch(DynReidError, ValueError):
    pass


class NoPositive(DynReidError, ValueError):
    def __init__(self, anchor):
        super().__init__(f"anchor {anchor} has no positive in the batch")
        self.anchor = anchor


class NoNegative(DynReidError, ValueError):
    def __init__(self, anchor):
        super().__init__(f"anchor {anchor} has no negative in the batch")
        self.anchor = anchor


class LabelOutOfRange(DynReidError, ValueError):
    pass


class SpecInvalid(DynReidError, ValueError):
    pass


class TooFewIdentities(DynReidError, ValueError):
    pass


class NoValidQuery(DynReidError, ValueError):
    pass


class AllZeroWeights(DynReidError, ValueError):
    pass


class ConfigInvalid(DynReidError, ValueError):
    pass


class FormatError(DynReidError, ValueError):
    pass


class CheckpointVersionMismatch(FormatError):
    pass
