"""Exception types raised across the package."""


class TransWCDError(Exception):
    """Base class for all package errors."""


class ConfigError(TransWCDError, ValueError):
    pass


class DimensionError(TransWCDError, ValueError):
    pass


class ShapeMismatch(TransWCDError, ValueError):
    pass


class LayoutError(TransWCDError):
    """Dataset directory does not follow the A/B/label layout."""


class LabelError(TransWCDError):
    """No image-level labels can be derived for a split."""


class EmptyCounts(TransWCDError, ValueError):
    pass


class RangeError(TransWCDError, ValueError):
    pass


class MissingGT(TransWCDError):
    """Evaluation requested on a pair without pixel ground truth."""
