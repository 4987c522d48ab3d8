"""Error taxonomy shared by the library, the service, and the CLI.

Three categories map onto the CLI exit codes (1/2/3) and onto HTTP statuses
in the service layer:

* ``UsageError``   — the caller asked for something malformed (bad flag
  combination, invalid scenario name, out-of-range class index).
* ``DataError``    — the inputs are structurally broken (dangling node
  reference, route shorter than the horizon, fingerprint mismatch).
* ``NumericError`` — the computation itself failed (non-finite loss,
  gradient check above tolerance).
"""


class RoutecastError(Exception):
    """Base class for all library errors."""

    category = "usage"


class UsageError(RoutecastError):
    category = "usage"


class DataError(RoutecastError):
    category = "data"


class NumericError(RoutecastError):
    category = "numeric"
