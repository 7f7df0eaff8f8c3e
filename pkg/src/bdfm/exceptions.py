"""Exception hierarchy for the flow-model engine."""


class FlowModelError(Exception):
    """Base class for all errors raised by :mod:`bdfm`."""


class NegativeOccupancy(FlowModelError, ValueError):
    def __init__(self, node, t):
        self.node = node
        self.t = t
        super().__init__(f"occupancy of node {node} becomes negative at t={t}")


class InconsistentZeroScale(FlowModelError, ValueError):
    """A positive count was observed where the Poisson scale is zero."""

    def __init__(self, x, t=None):
        self.x = x
        self.t = t
        where = "" if t is None else f" at t={t}"
        super().__init__(f"count {x} observed with zero scale factor{where}")


class IncompleteHistory(FlowModelError, ValueError):
    pass


class TickMismatch(FlowModelError, ValueError):
    def __init__(self, expected, got):
        self.expected = expected
        self.got = got
        super().__init__(f"expected tick {expected}, got {got}")


class AllZeroRates(FlowModelError, FloatingPointError):
    pass


class EmptyMask(FlowModelError, ValueError):
    def __init__(self, t):
        self.t = t
        super().__init__(f"no node pair passes the sparsity threshold at t={t}")


class GridTooCoarse(FlowModelError, ValueError):
    pass


class InvalidSpec(FlowModelError, ValueError):
    pass


class ParseError(FlowModelError, ValueError):
    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class UnsupportedVersion(FlowModelError, ValueError):
    pass


class StageError(FlowModelError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage, error):
        self.stage = stage
        self.error = error
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")
