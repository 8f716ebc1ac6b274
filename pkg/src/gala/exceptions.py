"""Exception hierarchy.

Every error carries a short machine-readable ``code`` (e.g. ``"NON_FINITE"``)
so callers and the CLI can branch on the failure class without parsing
messages.
"""


class GalaError(Exception):
    """Base class for all errors raised by this package."""

    code = "ERROR"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code

    def __str__(self):
        return f"[{self.code}] {super().__str__()}"


class ValidationError(GalaError, ValueError):
    """Input data violates a shape, finiteness or labeling invariant."""

    code = "INVALID"


class ConfigError(GalaError, ValueError):
    """A configuration value or key is invalid."""

    code = "BAD_CONFIG"


class SchemaError(GalaError, ValueError):
    """A file does not follow the expected column layout."""

    code = "SCHEMA"
