"""Exception types raised across the package."""


class DysonlabError(Exception):
    pass


# sampling
class InsufficientBulk(DysonlabError, ValueError):
    pass


class EigensolverFailure(DysonlabError, RuntimeError):
    pass


class MeshTooCoarse(DysonlabError, ValueError):
    pass


class NumericalBreakdown(DysonlabError, RuntimeError):
    pass


class OverflowGuard(DysonlabError, ValueError):
    pass


# dynamics
class CollisionError(DysonlabError, ValueError):
    pass


class MinStepReached(DysonlabError, RuntimeError):
    """Ordering could not be restored at the smallest allowed step.

    ``state`` holds the last accepted configuration, ``time`` its time.
    """

    def __init__(self, msg, state=None, time=None, rows=None):
        super().__init__(msg)
        self.state = state
        self.time = time
        self.rows = rows


class BoundaryEscape(DysonlabError, RuntimeError):
    def __init__(self, msg, state=None, time=None, rows=None):
        super().__init__(msg)
        self.state = state
        self.time = time
        self.rows = rows


class CorruptSnapshot(DysonlabError, IOError):
    pass


# observables
class WindowMismatch(DysonlabError, ValueError):
    pass


class TooManyEscapes(DysonlabError, RuntimeError):
    pass


class CutoffTooSmall(DysonlabError, RuntimeError):
    pass


class InsufficientMixing(DysonlabError, RuntimeError):
    pass
