"""Guard chain: each guard may forbid a query, otherwise it passes it on.

Guards are linked with :meth:`BaseGuard.set_next`, which returns the
next guard so chains read left to right::

    head = SyntaxGuard(syntax, schema)
    head.set_next(IsolatingGuard(isolating)).set_next(ShadowTableGuard(table))
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, runtime_checkable

from qbs_audit_core.query import Query


@dataclass(frozen=True)
class Verdict:
    allowed: bool
    reason: Optional[str] = None

    @classmethod
    def allow(cls) -> Verdict:
        return _ALLOWED

    @classmethod
    def forbid(cls, reason: str) -> Verdict:
        return cls(False, reason)


_ALLOWED = Verdict(True)


@dataclass
class GuardContext:
    query: Query
    verdict: Verdict = _ALLOWED


@runtime_checkable
class QueryGuard(Protocol):
    def check(self, context: GuardContext) -> None: ...
    def set_next(self, next_guard: QueryGuard) -> QueryGuard: ...


class BaseGuard:
    def __init__(self) -> None:
        self._next: Optional[QueryGuard] = None

    def set_next(self, next_guard: QueryGuard) -> QueryGuard:
        self._next = next_guard
        return next_guard

    def check(self, context: GuardContext) -> None:
        if self._next and context.verdict.allowed:
            self._next.check(context)

    def run(self, query: Query) -> Verdict:
        """Evaluate the chain starting here."""
        context = GuardContext(query)
        self.check(context)
        return context.verdict
