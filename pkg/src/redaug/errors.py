"""Exception hierarchy shared by all redaug modules."""


class RedaugError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(RedaugError):
    """A configuration value violates a documented precondition."""


class UsageError(RedaugError):
    """An object was driven outside its contract (e.g. stepping a finished episode)."""


class DataIntegrityError(RedaugError):
    """Persisted data failed a consistency check on load."""


class DivergenceError(RedaugError):
    """A training loop produced NaN/Inf and was aborted."""
