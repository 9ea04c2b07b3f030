from .base import BaseGuard, GuardContext, QueryGuard, Verdict
from .isolating import IsolatingGuard, is_isolating, isolating_attributes
from .shadow_table import ShadowTable, ShadowTableGuard, build_shadow_table
from .syntax import SyntaxGuard

__all__ = [
    "BaseGuard",
    "GuardContext",
    "IsolatingGuard",
    "QueryGuard",
    "ShadowTable",
    "ShadowTableGuard",
    "SyntaxGuard",
    "Verdict",
    "build_shadow_table",
    "is_isolating",
    "isolating_attributes",
]
