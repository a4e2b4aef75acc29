"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or input arguments."""


class DimensionError(ValueError):
    """Array lengths do not match what the model expects."""


class ValidationError(ValueError):
    """A value violates a documented invariant (e.g. a non-orthonormal rotation)."""


class NotApplicableError(ValueError):
    """The operation is not defined for this kind of robot."""


class UnsupportedError(ValueError):
    """The input is outside what the implementation supports (e.g. DOF > 7)."""


class StateError(RuntimeError):
    """Method called in the wrong order (e.g. backward before forward)."""


class SimulationDiverged(RuntimeError):
    """Non-finite state produced by the simulator."""

    def __init__(self, message, step=None, context=None):
        super().__init__(message)
        self.step = step
        self.context = dict(context or {})


class EmbeddingLookupError(KeyError):
    """Unknown robot id requested from an embedding table outside fine-tune mode."""


class ProtocolError(RuntimeError):
    """Evaluation protocol not applicable to this checkpoint."""


class MigrationError(ValueError):
    """Checkpoint dimensions incompatible with the requested run."""
