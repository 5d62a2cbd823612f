"""Exception types shared across the package."""


class CurvatureError(RuntimeError):
    """A curvature pair violates s'r > 0, or an update lost positive definiteness."""


class AggregationError(RuntimeError):
    """Pair aggregation could not reproduce the full-history operator within tolerance."""


class DiagnosticsError(RuntimeError):
    """A diagnostic quantity is undefined for the given inputs (degenerate matrix, failed solve)."""
