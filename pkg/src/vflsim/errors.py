"""Exception types shared across the simulator."""


class VflError(Exception):
    """Base class for simulator errors."""


class ShapeError(VflError, ValueError):
    pass


class StateError(VflError, RuntimeError):
    pass


class ValidationError(VflError, ValueError):
    pass


class ConfigError(VflError, ValueError):
    pass


class ParseError(VflError, ValueError):
    pass


class SchemaError(VflError, ValueError):
    pass


class DivergenceError(VflError, ArithmeticError):
    pass


class StageError(VflError):
    """Wraps an error raised inside the experiment pipeline with seed/stage context."""

    def __init__(self, stage: str, seed: int | None, cause: BaseException):
        self.stage = stage
        self.seed = seed
        self.cause = cause
        where = f"stage={stage}" + (f" seed={seed}" if seed is not None else "")
        super().__init__(f"[{where}] {type(cause).__name__}: {cause}")
