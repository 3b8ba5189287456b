"""Exception hierarchy for mfgibbs."""


class MFGibbsError(Exception):
    """Base class for all library errors."""


class InvalidParameter(MFGibbsError, ValueError):
    pass


class SpaceMismatch(MFGibbsError, ValueError):
    pass


class InsufficientResolution(MFGibbsError, ValueError):
    pass


class DegenerateObservable(MFGibbsError, ValueError):
    pass


class TruncationInsufficient(MFGibbsError, ValueError):
    pass


class MarginalViolation(MFGibbsError, ValueError):
    """A kernel fails one of its two marginal conditions."""


class EmptyPartitionClass(MFGibbsError, ValueError):
    pass


class GridUnsupported(MFGibbsError, ValueError):
    pass


class NumericalUnderflow(MFGibbsError, ArithmeticError):
    pass


class NoConsistentMeasure(MFGibbsError, RuntimeError):
    pass


class NonUniqueMinimizer(MFGibbsError):
    """Two or more fixed-point clusters tie for the minimal potential value.

    The clusters are attached so callers can inspect the competing states.
    """

    def __init__(self, message, clusters=()):
        super().__init__(message)
        self.clusters = list(clusters)


class ResourceLimit(MFGibbsError, ValueError):
    pass
