class ConfigError(ValueError):
    """Raised when a config section violates its invariants."""


class MethodInapplicable(RuntimeError):
    """A baseline cannot run on the given data (e.g. an empty (t, b) cell)."""

    def __init__(self, method, empty_cells):
        self.method = method
        self.empty_cells = sorted(empty_cells)
        super().__init__(
            "{} is inapplicable: empty cells {}".format(method, self.empty_cells)
        )


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__("Training diverged at epoch {} (loss {})".format(epoch, loss))


class StepOrderViolation(RuntimeError):
    """A training step mutated a component it declared frozen."""


class ExperimentStageError(RuntimeError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__("Stage '{}' failed: {}".format(stage, cause))
