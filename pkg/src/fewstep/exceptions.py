"""Error types shared across the package."""


class ConfigError(ValueError):
    """Invalid or malformed run configuration."""


class TrainingAbort(RuntimeError):
    """A training loop tripped a divergence or collapse detector.

    Carries a ``diagnostics`` dict with the offending values so callers
    can log something more useful than a bare traceback.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class QuadratureCoverageError(ValueError):
    """Quadrature grid fails to cover enough probability mass."""


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, corrupt, or shape-incompatible."""
