"""Exception types shared across the package."""


class TeleobError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(TeleobError):
    """A parameter or configuration document violates its contract."""


class ClusteringError(TeleobError):
    """Clustering could not proceed (degenerate covariance, bad data)."""

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class IdentificationError(TeleobError):
    """Local model regression failed for a specific rule."""

    def __init__(self, message: str, rule: int | None = None):
        if rule is not None:
            message = f"{message} (rule {rule})"
        super().__init__(message)
        self.rule = rule


class IllConditionedModelError(TeleobError):
    """Blended inertia matrix exceeds the configured condition-number cap."""


class DivergenceError(TeleobError):
    """Simulation state became non-finite or left its admissible region."""

    def __init__(self, message: str, t: float | None = None):
        if t is not None:
            message = f"{message} (t = {t:.6f} s)"
        super().__init__(message)
        self.t = t


class DegenerateEstimatorError(TeleobError):
    """A horizon solve hit a numerically singular system."""

    def __init__(self, message: str, cond_state: float | None = None,
                 cond_lam: float | None = None):
        super().__init__(message)
        self.cond_state = cond_state
        self.cond_lam = cond_lam


class ExcitationError(TeleobError):
    """Identification excitation drove the plant out of bounds."""


class SingularityError(TeleobError):
    """A nominal model matrix that must be inverted is (near) singular."""
