"""Exception types shared across the risloc package."""


class RislocError(Exception):
    """Base class for all risloc errors."""


class GeometryError(RislocError):
    """Geometric configuration is invalid (e.g. cosine outside [-1, 1])."""


class OverlapError(GeometryError):
    """Two RIS unit cells are closer than the minimum spacing."""


class DegenerateLayout(GeometryError):
    """Layout has too few cells for the requested quantity."""


class OriginError(GeometryError):
    """Position coincides with the array reference point."""


class ZeroModelError(RislocError):
    """Model vector has zero norm; projection is undefined."""


class SingularSystemError(RislocError):
    """Least-squares normal system is rank deficient (degenerate geometry)."""


class EmptyInput(RislocError):
    """An aggregation operation received no data."""


class ConfigError(RislocError):
    """Configuration file is missing, malformed, or inconsistent."""
