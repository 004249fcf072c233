"""Exception types shared across the package."""


class BandFusionError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(BandFusionError):
    """Tensor or raster dimensions do not line up."""


class ValidationError(BandFusionError):
    """User-supplied values violate a precondition (bad config, label, index)."""


class LoadError(BandFusionError):
    """A raster container or manifest could not be read."""


class ContractError(BandFusionError):
    """An API was called in a way its contract forbids."""
