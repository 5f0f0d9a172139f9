"""Exception hierarchy shared by every pipeline stage."""


class ClimbNavError(Exception):
    """Base class for pipeline errors."""


# -- input / geometry -------------------------------------------------------

class ParseError(ClimbNavError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())


class EmptyCloud(ClimbNavError):
    pass


class KTooLarge(ClimbNavError):
    pass


class DegenerateNeighborhood(ClimbNavError):
    """Every vertex had a rank-deficient neighbourhood; nothing usable remains."""

    def __init__(self, message, vertex_ids=()):
        self.vertex_ids = tuple(vertex_ids)
        super().__init__(message)


# -- reconstruction ---------------------------------------------------------

class DegenerateBounds(ClimbNavError):
    pass


class NoConvergence(ClimbNavError):
    def __init__(self, message, residual, iterations):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")


class EmptySurface(ClimbNavError):
    pass


class NoEdges(UserWarning):
    """Issued when a scene graph ends up without a single edge."""


# -- planning ---------------------------------------------------------------

class PlanningError(ClimbNavError):
    pass


class NoPath(PlanningError):
    pass


class GoalOutsideTether(PlanningError):
    pass


class StartOutsideTether(PlanningError):
    pass


class NoRoute(PlanningError):
    pass


class OffRoute(PlanningError):
    pass


class AtGoal(OffRoute):
    pass


# -- simulation -------------------------------------------------------------

class SimulationError(ClimbNavError):
    pass


class TetherViolation(SimulationError):
    pass


class Stranded(SimulationError):
    pass


class HopBudgetExhausted(SimulationError):
    pass
