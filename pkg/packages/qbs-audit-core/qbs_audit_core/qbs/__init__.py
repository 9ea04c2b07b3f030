"""The simulated query-based system."""

from .guards import ShadowTable, Verdict, build_shadow_table, is_isolating
from .instance import MitigationConfig, QbsInstance
from .noise import noisy_threshold, seeded_gaussian, userset_digest

__all__ = [
    "MitigationConfig",
    "QbsInstance",
    "ShadowTable",
    "Verdict",
    "build_shadow_table",
    "is_isolating",
    "noisy_threshold",
    "seeded_gaussian",
    "userset_digest",
]
