"""Exception hierarchy shared by the library and the CLI."""


class DecompPIError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DecompPIError, ValueError):
    """A configuration, schema or input-file problem (CLI exit code 1)."""


class InvalidInstanceError(ConfigError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid instance: " + "; ".join(self.violations))


class DegenerateInstanceError(DecompPIError, ValueError):
    """Raised when a closed form is undefined for the given parameters."""


class InstanceTooLargeError(DecompPIError):
    pass


class PolicyNotEvaluableError(DecompPIError):
    """The policy is history dependent and cannot be evaluated by exact DP."""


class DimensionError(DecompPIError, ValueError):
    pass


class FeatureWindowError(DecompPIError, ValueError):
    """A feature or label was requested outside the usable enrollment window."""


class UndefinedLabelError(FeatureWindowError):
    pass


class EmptyArmError(ConfigError):
    """One action arm has no training samples."""


class DegeneratePropensityError(DecompPIError, ValueError):
    pass
