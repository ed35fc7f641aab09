"""Exception hierarchy shared by all modules."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with the requested operation."""


class DomainError(ValueError):
    """An argument lies outside the operation's valid domain."""


class ContractError(ValueError):
    """The caller violated an operation contract (e.g. mixed-class batch)."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where finite math was required."""


class DegenerateSampleError(ValueError):
    """A sample set is too degenerate for the requested estimate."""


class ConfigError(ValueError):
    """A configuration key is unknown, mistyped, or violates an invariant."""


class EvaluatorQualityError(RuntimeError):
    """The evaluation classifier failed its accuracy gate."""


class CheckpointVersionError(RuntimeError):
    """Checkpoint file has an unsupported format version."""


class CheckpointIntegrityError(RuntimeError):
    """Checkpoint file is truncated or corrupted."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
