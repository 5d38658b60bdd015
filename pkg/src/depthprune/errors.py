"""Exception hierarchy shared across the toolkit."""


class DepthPruneError(Exception):
    """Base class for all toolkit-specific failures."""


class ShapeError(DepthPruneError):
    """Operands have incompatible or malformed dimensions."""


class EmptyInputError(DepthPruneError):
    """An operation received zero rows where at least one is required."""


class LayerIndexError(DepthPruneError):
    """A layer index is outside the model's layer range."""


class PlanError(DepthPruneError):
    """A pruning plan is internally inconsistent or does not fit its target."""


class ConfigError(DepthPruneError):
    """Invalid model or run configuration."""


class DataError(DepthPruneError):
    """Calibration data is invalid for the target model."""


class TrainError(DepthPruneError):
    """Training diverged (non-finite loss)."""


class SearchError(DepthPruneError):
    """The search objective misbehaved or the search could not produce a result."""


class IntegrityError(DepthPruneError):
    """Stored content does not match its recorded hash."""


class FormatError(DepthPruneError):
    """A file does not conform to the expected binary or JSON layout."""


class VersionError(DepthPruneError):
    """Unsupported schema version."""
