"""Exception types shared across the package."""


class CfgenError(Exception):
    """Base class for all cfgen errors."""


class DimensionError(CfgenError):
    """Array shapes do not line up (names the offending layer/operand)."""


class NumericError(CfgenError):
    """A non-finite value appeared where finite arithmetic is required."""


class ConfigurationError(CfgenError):
    """Invalid configuration: bad mechanism parameters, cycles, empty inputs."""


class StateError(CfgenError):
    """Operation requires state the object does not have (e.g. untrained model)."""


class ParseError(CfgenError):
    """Raw data could not be parsed as declared (names row/column)."""


class RangeError(CfgenError):
    """Value outside the schema's observed range in strict ingestion mode."""


class DegenerateFitError(CfgenError):
    """A fit has no unique solution (e.g. constant regressor)."""


class InsufficientDataError(CfgenError):
    """Not enough samples per group for the requested statistical procedure."""


class DependencyError(CfgenError):
    """A required prior artifact is missing; names the subcommand that makes it."""
