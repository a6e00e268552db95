class ActiveLocError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(ActiveLocError, ValueError):
    pass


class DegenerateInputError(ActiveLocError, ValueError):
    pass


class EmptyRequestError(ActiveLocError, ValueError):
    pass


class OutOfBoundsError(ActiveLocError, ValueError):
    pass


class GenerationError(ActiveLocError, RuntimeError):
    pass


class EmptyMapError(GenerationError):
    pass


class SchemaError(ActiveLocError, ValueError):
    pass


class TrainingError(ActiveLocError, RuntimeError):
    pass


class BalancingError(ActiveLocError, ValueError):
    pass
