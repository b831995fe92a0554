"""Exception hierarchy shared by the planner modules."""


class SoftJigError(Exception):
    """Base class for all planner errors."""


class DegenerateInput(SoftJigError):
    """Point set is lower-dimensional than the requested hull dimension."""


class DimensionMismatch(SoftJigError, ValueError):
    pass


class CapExceeded(SoftJigError):
    """Minkowski enumeration would exceed the configured vertex-product cap."""


class InfeasibleOrientation(SoftJigError, ValueError):
    pass


class CavityOutOfBounds(SoftJigError, ValueError):
    pass


class PenetrationTooDeep(SoftJigError):
    pass


class NoContacts(SoftJigError):
    pass


class NoStablePose(SoftJigError):
    pass


class NoConsensus(SoftJigError):
    pass


class Diverged(SoftJigError):
    pass


class ConfigError(SoftJigError, ValueError):
    """Invalid run configuration; ``field`` and ``line`` locate the problem."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
