"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violated an operation's precondition."""


class LoadError(ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class TrainingError(RuntimeError):
    """Training produced a non-finite objective."""

    def __init__(self, message, last_finite_epoch):
        self.last_finite_epoch = last_finite_epoch
        super().__init__(f"{message} (last finite epoch: {last_finite_epoch})")


class StageError(RuntimeError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


class ConvergenceError(RuntimeError):
    """An iterative diffusion did not reach its tolerance."""
