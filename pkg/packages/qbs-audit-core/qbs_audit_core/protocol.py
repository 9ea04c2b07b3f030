"""Shared protocol, constants and utilities for the audit toolkit.

Defines :class:`QueryAnswerer` -- the formal contract satisfied by
:class:`~qbs_audit_core.qbs.instance.QbsInstance` and by the stub
systems used in tests.  Fleets, games and attacks depend on this
interface, not on the concrete simulator, so a noise-free stub can be
dropped in wherever an end-to-end sanity check is needed.

Also provides :func:`parallel_map`, the single worker-pool helper used
by fleet evaluation, the privacy games and the vulnerability scan.
"""

from __future__ import annotations

import os
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, Protocol, TypeVar, runtime_checkable

if TYPE_CHECKING:
    from qbs_audit_core.query import Query

T = TypeVar("T")
R = TypeVar("R")

# ---------------------------------------------------------------------------
# Noise and suppression constants
# ---------------------------------------------------------------------------

THRESHOLD_MEAN: float = 4.0
"""Mean of the noisy suppression threshold."""

THRESHOLD_STD: float = 0.5
"""Standard deviation of the noisy suppression threshold."""

SUPPRESSION_FLOOR: int = 2
"""Hard floor: true counts at or below this are always suppressed."""

NOISE_STD: float = 1.0
"""Standard deviation of every static and dynamic noise layer."""

# ---------------------------------------------------------------------------
# Mitigation constants
# ---------------------------------------------------------------------------

ISOLATING_RATIO: float = 0.8
"""Share of single-user values above which an attribute is isolating."""

SHADOW_MIN_USERS: int = 10
"""Minimum distinct users holding a value for it to enter the shadow table."""

SHADOW_MAX_VALUES: int = 200
"""Per-attribute cap on shadow-table values (most frequent first)."""

# ---------------------------------------------------------------------------
# Query generation constants
# ---------------------------------------------------------------------------

ABSENT_VALUE: float = -1_000_000.0
"""Sentinel set element that never occurs in any dataset."""

RANGE_WIDTHS: tuple[float, ...] = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0)
"""Finite width grid used when *generating* BETWEEN intervals."""

SEARCH_SENSITIVE_VALUE: int = 1
"""Value compared against the sensitive attribute during search."""

# ---------------------------------------------------------------------------
# Inference and reporting constants
# ---------------------------------------------------------------------------

DEFAULT_LEARNING_RATE: float = 0.1
DEFAULT_ITERATIONS: int = 500
DEFAULT_L2: float = 1e-4

STABILITY_WINDOW: int = 100
"""Number of trailing iterations compared by the stability metric."""

HISTOGRAM_BIN_WIDTH: float = 0.025
"""Bin width (as an accuracy fraction) of the vulnerability histogram."""

THREADS_ENV_VAR: str = "QBS_AUDIT_THREADS"
"""Fallback for ``--threads`` when the flag is not given."""


# ---------------------------------------------------------------------------
# QueryAnswerer protocol
# ---------------------------------------------------------------------------


@runtime_checkable
class QueryAnswerer(Protocol):
    """Contract shared by the simulator and test stubs.

    ``computations`` counts answers that were computed rather than
    served from a cache; the incremental search is checked against it.
    """

    computations: int

    def answer(self, query: Query) -> float: ...


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def resolve_threads(threads: int | None = None) -> int:
    """Return the worker count: explicit value, env var, then core count."""
    if threads is not None and threads > 0:
        return threads
    raw = os.environ.get(THREADS_ENV_VAR, "").strip()
    if raw:
        try:
            value = int(raw)
        except ValueError:
            value = 0
        if value > 0:
            return value
    return os.cpu_count() or 1


def parallel_map(
    fn: Callable[[T], R],
    items: Iterable[T],
    threads: int = 1,
) -> list[R]:
    """Apply *fn* to every item, preserving order.

    Runs inline when *threads* is 1 so single-threaded callers (and
    nested pools) never pay for executor start-up.
    """
    seq: Sequence[T] = items if isinstance(items, Sequence) else list(items)
    if threads <= 1 or len(seq) <= 1:
        return [fn(item) for item in seq]
    with ThreadPoolExecutor(max_workers=min(threads, len(seq))) as pool:
        return list(pool.map(fn, seq))
