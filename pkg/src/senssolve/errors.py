"""Exception hierarchy for senssolve."""


class SensSolveError(Exception):
    """Base class for all library errors."""


class DesignError(SensSolveError, ValueError):
    """Invalid matched design input."""


class EmptyInput(DesignError):
    pass


class MissingTreated(DesignError):
    def __init__(self, block_id):
        super().__init__(f"block {block_id!r} has no treated unit")
        self.block_id = block_id


class MultipleTreated(DesignError):
    def __init__(self, block_id):
        super().__init__(f"block {block_id!r} has more than one treated unit")
        self.block_id = block_id


class NonFiniteOutcome(DesignError):
    pass


class StratumTooSmall(DesignError):
    pass


class LengthTooSmall(SensSolveError, ValueError):
    pass


class DegenerateVariance(SensSolveError, ArithmeticError):
    """The worst-case variance is zero, so no randomness remains."""


class ProbabilityRowInvalid(SensSolveError, ValueError):
    pass


class InfeasibleRestriction(SensSolveError, ValueError):
    pass


class RankDeficientQ(SensSolveError, ValueError):
    pass


class LeverageOne(SensSolveError, ValueError):
    pass


class TooFewStrata(SensSolveError, ValueError):
    pass


class NotSignificantAtOne(SensSolveError):
    pass


class NoCrossingBelowMax(SensSolveError):
    pass


class DegenerateSE(SensSolveError, ArithmeticError):
    pass


class NonBinaryOutcome(SensSolveError, ValueError):
    pass


class InfeasibleTau0(SensSolveError, ValueError):
    pass


class NonIntegerTarget(SensSolveError, ValueError):
    pass


class UnknownScenario(SensSolveError, KeyError):
    pass
