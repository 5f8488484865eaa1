"""Exception taxonomy shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ArithmeticError):
    """An input value lies outside the mathematical domain of the operation."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class ParamError(ValueError):
    """An argument value violates the operation's contract."""


class ConfigError(ValueError):
    """An invalid or inconsistent configuration."""


class ContractError(RuntimeError):
    """A caller broke a documented usage contract."""


class InputError(ValueError):
    """Runtime input (clip, dataset, file) cannot be processed."""


class TrainingAbort(RuntimeError):
    """Training stopped on a non-finite loss; carries step diagnostics."""

    def __init__(self, step, lr, loss):
        super().__init__(f"non-finite training loss {loss!r} at optimizer step {step} (lr={lr:g})")
        self.step = step
        self.lr = lr
        self.loss = loss
