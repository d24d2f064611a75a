"""Exception types shared across the package."""


class DiscreteGradError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DiscreteGradError, ValueError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        shown = " vs ".join(str(s) for s in self.shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericError(DiscreteGradError, FloatingPointError):
    """An operation produced NaN or infinite values."""

    def __init__(self, op, detail=""):
        self.op = op
        super().__init__(f"{op}: non-finite output" + (f" ({detail})" if detail else ""))


class GraphError(DiscreteGradError, RuntimeError):
    """The computation graph cannot be differentiated as requested."""


class ConfigError(DiscreteGradError, ValueError):
    """Invalid configuration value (temperature, schedule, estimator kind, ...)."""


class EnumerationError(DiscreteGradError, ValueError):
    """Exhaustive enumeration of latent configurations would exceed the cap."""

    def __init__(self, count, cap):
        self.count = count
        self.cap = cap
        super().__init__(f"refusing to enumerate {count} latent configurations (cap {cap})")


class DataError(DiscreteGradError, ValueError):
    """Malformed or unusable dataset input."""


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class TrainingError(DiscreteGradError, RuntimeError):
    """Training hit a non-finite loss; carries the step and config echo."""

    def __init__(self, step, loss, config):
        self.step = step
        self.loss = loss
        self.config = config
        super().__init__(f"non-finite loss {loss!r} at step {step}; config={config}")
