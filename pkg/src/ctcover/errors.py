"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class DegenerateGeometry(ValueError):
    pass


class RoiNotVisible(ValueError):
    """The projected VOI falls behind the source or outside the detector."""


class InfeasibleProblem(ValueError):
    """The budget k exceeds the number of candidates that pass the absorption filter."""

    def __init__(self, k, n_feasible):
        super().__init__(f"budget k={k} exceeds the {n_feasible} feasible candidates")
        self.k = k
        self.n_feasible = n_feasible


class InstanceTooLarge(ValueError):
    pass


class ConfigError(ValueError):
    pass


class StageFailure(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class InvariantViolation(RuntimeError):
    pass
