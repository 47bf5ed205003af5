"""Exception types raised across the package."""


class ContractError(Exception):
    """Base class for every error raised by pacontract."""


class InvalidModel(ContractError):
    pass


class InvalidParams(ContractError):
    pass


class NoIncentivizingSensitivity(ContractError):
    def __init__(self, control, z_max):
        super().__init__(
            f"control {control!r} is not in the argmax of -h(a) + z*a for any z in [0, {z_max}]"
        )
        self.control = control
        self.z_max = z_max


class GridError(ContractError):
    """Grid bounds or resolution are inconsistent with the model."""


class CflViolation(GridError):
    pass


class NonFiniteValue(ContractError):
    def __init__(self, step, message="non-finite value function"):
        super().__init__(f"{message} at time step {step}")
        self.step = step


class OutOfBounds(ContractError):
    pass


class GridEscape(ContractError):
    def __init__(self, step, path, variable, value):
        super().__init__(
            f"path {path} left the grid at step {step}: {variable}={value!r}; widen the grid bounds"
        )
        self.step = step
        self.path = path
        self.variable = variable
        self.value = value


class ParseError(ContractError):
    pass


class CoverageError(ContractError):
    pass


class ConfigError(ContractError):
    pass


class ArtifactMismatch(ContractError):
    pass
