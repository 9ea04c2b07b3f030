from __future__ import annotations

from collections.abc import Sequence

from qbs_audit_core.data import AttributeSchema
from qbs_audit_core.query import QuerySyntax, is_supported

from .base import BaseGuard, GuardContext, Verdict


class SyntaxGuard(BaseGuard):
    """Forbids queries the system's syntax does not support."""

    def __init__(self, syntax: QuerySyntax, schema: Sequence[AttributeSchema]) -> None:
        super().__init__()
        self.syntax = syntax
        self.schema = tuple(schema)

    def check(self, context: GuardContext) -> None:
        if not is_supported(context.query, self.syntax, self.schema):
            context.verdict = Verdict.forbid("unsupported")
        super().check(context)
