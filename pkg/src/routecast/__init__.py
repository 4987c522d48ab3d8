"""routecast: knowledge-graph route prediction on road networks."""

__version__ = "0.1.0"

from .errors import DataError, NumericError, RoutecastError, UsageError

__all__ = [
    "__version__",
    "RoutecastError",
    "UsageError",
    "DataError",
    "NumericError",
]
