# packages/engines/errors.py
# One hierarchy for everything the engines raise; the CLI maps it to exit codes.


class LamChargeError(Exception):
    """Base class for engine failures."""


class ParamsSchemaError(LamChargeError):
    def __init__(self, field: str, message: str = ""):
        self.field = field
        super().__init__(message or f"parameter file is missing required field '{field}'")


class ParamsValidationError(LamChargeError):
    def __init__(self, field: str, bound: str, message: str = ""):
        self.field = field
        self.bound = bound
        super().__init__(message or f"parameter '{field}' violates bound {bound}")


class DomainError(LamChargeError, ValueError):
    pass


class EvaluationError(LamChargeError):
    pass


class SaturationError(LamChargeError):
    def __init__(self, electrode: str, message: str = ""):
        self.electrode = electrode
        super().__init__(message or f"{electrode} electrode surface concentration left [0, c_max]")


class KineticsError(LamChargeError):
    pass


class SolverError(LamChargeError):
    def __init__(self, residual_norm: float, message: str = ""):
        self.residual_norm = residual_norm
        super().__init__(message or f"Newton did not converge (last residual norm {residual_norm:.3e})")


class ProtocolTimeoutError(LamChargeError):
    pass


class CellDeadError(LamChargeError):
    pass


class EpisodeDoneError(LamChargeError):
    pass


class TrainingDivergedError(LamChargeError):
    def __init__(self, message: str, snapshot_path: str = ""):
        self.snapshot_path = snapshot_path
        super().__init__(message)


class CheckpointError(LamChargeError):
    pass


class ComparisonError(LamChargeError):
    pass
