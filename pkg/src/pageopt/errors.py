"""Exception hierarchy shared across the engine.

Every domain failure derives from :class:`PageOptError` so callers (the CLI in
particular) can map the whole family to a single exit code.
"""

from __future__ import annotations


class PageOptError(Exception):
    """Base class for all domain errors."""

    def __init__(self, message: str, *, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
        self.message = message
        self.region: str | None = None

    def in_region(self, region: str, region_path: str) -> PageOptError:
        """Tag the error with the region whose instantiation failed."""
        if self.region is None:
            self.region = region
            self.args = (f"[{region_path}] {self.args[0]}",) + tuple(self.args[1:])
        return self


class MalformedDocument(PageOptError):
    """Input text is not well-formed for the accepted markup subset."""


class SchemaViolation(PageOptError):
    """Well-formed document that breaks the page-model schema."""


class DuplicateLabel(PageOptError):
    pass


class DslSyntaxError(PageOptError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} (at offset {position})")


class DslTypeError(PageOptError):
    def __init__(self, message: str, node_path: str):
        self.node_path = node_path
        super().__init__(message, path=node_path)


class MissingItem(PageOptError):
    pass


class TooLarge(PageOptError):
    """Brute-force guard exceeded."""


class UnknownHandler(PageOptError):
    def __init__(self, handler: str, *, path: str | None = None):
        self.handler = handler
        super().__init__(f"unknown handler {handler!r}", path=path)


class FetchFailed(PageOptError):
    def __init__(self, operator_id: str, cause: BaseException | str, *, path: str | None = None):
        self.operator_id = operator_id
        self.cause = cause
        super().__init__(f"fetch failed for operator {operator_id!r}: {cause}", path=path)


class UnknownPolicy(PageOptError):
    def __init__(self, policy: str, *, path: str | None = None):
        self.policy = policy
        super().__init__(f"unknown policy {policy!r}", path=path)


class Infeasible(PageOptError):
    """No assignment satisfies the constraints in scope."""


class PoolTooSmall(PageOptError):
    pass


class SearchSpaceTooLarge(PageOptError):
    pass


class DomainError(PageOptError, ValueError):
    """Numeric precondition violated (zero impressions, bad Beta parameters)."""


class MissingFragment(PageOptError):
    pass


class DuplicateInstance(PageOptError):
    pass


class StorageError(PageOptError):
    pass


class ConfigError(PageOptError):
    pass
