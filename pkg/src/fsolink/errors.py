"""Exception types shared across the simulator."""


class FsolinkError(Exception):
    """Base class for all simulator errors."""


class ParameterError(FsolinkError, ValueError):
    """A scalar parameter is out of its documented range."""


class DimensionError(FsolinkError, ValueError):
    """Grid shapes or spacings of two operands do not match."""


class InvalidFieldError(FsolinkError, ValueError):
    """A field contains non-finite samples or is otherwise unusable."""


class ZeroPowerError(FsolinkError, ValueError):
    """An efficiency is undefined because the field carries no power."""


class CurveCrossingError(FsolinkError, ValueError):
    """A BER curve does not cross the requested target level.

    ``side`` names the offending curve ("curve" or "reference").
    """

    def __init__(self, message, side):
        super().__init__(message)
        self.side = side


class ScanRangeError(FsolinkError, ValueError):
    """A delay scan range does not bracket the efficiency peak."""


class ControllerFault(FsolinkError, RuntimeError):
    """The control loop observed a non-finite objective value."""


class ConfigError(FsolinkError, ValueError):
    """Scenario configuration failed validation.

    ``path`` is the dotted path of the offending field, e.g.
    ``atmosphere.outer_scale_m``.
    """

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class MissingArtifactError(FsolinkError, FileNotFoundError):
    """A CLI command needs an artifact a previous step has not produced."""


class NumericalContractError(FsolinkError, ArithmeticError):
    """A numerical invariant (power conservation, determinism) was violated."""
