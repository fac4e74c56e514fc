"""Exception types raised across the package.

Argument/contract violations that are plain misuse raise ``ValueError``
subclasses so callers can catch them generically.
"""


class LayerQuantError(Exception):
    """Base class for all package errors."""


class FormatError(LayerQuantError, ValueError):
    """A file does not follow the expected container or CSV layout."""


class ShapeError(LayerQuantError, ValueError):
    """A tensor has the wrong number of dimensions or mismatched shape."""


class NamingError(LayerQuantError, ValueError):
    """A tensor name does not parse as ``<layer_index>.<module_name>``."""


class DegenerateInputError(LayerQuantError, ValueError):
    """Input has zero variance or is otherwise statistically degenerate."""


class CoverageError(LayerQuantError, ValueError):
    """Metric rows do not cover every entry of a bundle."""


class InfeasibleError(LayerQuantError, ValueError):
    """No allocation satisfies the memory budget."""

    def __init__(self, message, min_budget_mb=None):
        super().__init__(message)
        self.min_budget_mb = min_budget_mb


class PairingError(LayerQuantError, ValueError):
    """Result records lack a counterpart needed for a comparison."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)
