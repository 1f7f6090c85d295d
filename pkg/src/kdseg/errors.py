"""Exception types shared across the package.

Validation-type errors derive from ValueError, runtime/data failures from
RuntimeError; the CLI maps the two families to exit codes 1 and 2.
"""


class FormatError(ValueError):
    """Unsupported raster format, bit depth, or channel layout."""


class ManifestError(ValueError):
    """Dataset layout or manifest content is invalid."""


class DimensionError(ValueError):
    """Array shapes disagree with the operation's contract."""


class TransformError(ValueError):
    """Geometric transform cannot be applied to the given input."""


class ConfigError(ValueError):
    """Configuration value out of range or inconsistent."""


class TrainingError(RuntimeError):
    """Non-finite gradients/losses or an otherwise failed training run."""


class DistillationError(RuntimeError):
    """Teacher could not supply an output for a requested image."""


class EvaluationError(RuntimeError):
    """Prediction missing or unusable during evaluation."""


class StatisticsError(ValueError):
    """Invalid input to a statistical test."""
