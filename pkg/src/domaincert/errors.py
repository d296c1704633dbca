"""Error types shared across the toolkit.

The CLI maps these onto distinct exit codes (input 2, resource 3,
anything else 1), so library code should raise the most specific one.
"""


class DomainCertError(Exception):
    """Base class for all toolkit errors."""


class InputError(DomainCertError, ValueError):
    """Caller supplied invalid data (bad token ids, empty corpus, ...)."""


class ResourceLimitError(DomainCertError, RuntimeError):
    """An exact computation would exceed the configured search budget."""
