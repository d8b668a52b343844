"""Exception types shared across the package.

Input problems (bad files, bad parameters, contract violations by the
caller) raise subclasses of :class:`InputError`.  A schedule or plan that
fails our own invariants raises :class:`InternalInvariantError`; seeing one
means there is a bug here, not in the caller's data.
"""


class SimulittsError(Exception):
    """Base class for all errors raised by this package."""


class InputError(SimulittsError):
    """Base class for caller-input problems (CLI exit code 1)."""


class EmptyUtterance(InputError):
    """An operation that needs at least one token/chunk received none."""


class EmptyInput(InputError):
    """An aggregate operation received an empty collection."""


class MalformedInput(InputError):
    """Structured input violates the documented format or an invariant."""


class ConfigurationError(InputError):
    """A parameter or configuration value is out of its legal range."""


class InternalInvariantError(SimulittsError):
    """An internally produced artifact failed validation (CLI exit code 2)."""
