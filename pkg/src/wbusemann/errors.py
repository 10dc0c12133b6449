"""Exception types raised across the package."""


class WBusemannError(Exception):
    """Base class for all package errors."""


class DomainError(WBusemannError, ValueError):
    """An argument lies outside the domain of the operation."""


class InvalidMeasureError(DomainError):
    """Measure data violates its invariants (weights, SPD, finiteness)."""


class InvalidRayError(DomainError):
    """The supplied pair of measures does not define a geodesic ray."""


class DatasetError(WBusemannError, ValueError):
    """Malformed labeled dataset, optionally pointing at the offending row."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class CapacityError(WBusemannError):
    """Exact OT problem exceeds the configured size cap."""
