"""Plain-text rendering of queries, game results and reports.

Queries render as SQL-like debug strings::

    SELECT count(*) WHERE age NEQ 4 AND hours BETWEEN (40,41)
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import TYPE_CHECKING

from qbs_audit_core.data import AttributeSchema
from qbs_audit_core.query import Condition, Operator, Query, QueryMultiset

if TYPE_CHECKING:
    from qbs_audit_core.analysis import AttackReport
    from qbs_audit_core.game import GameResult

_OPERATOR_TEXT = {
    Operator.EQ: "=",
    Operator.NEQ: "NEQ",
    Operator.BETWEEN: "BETWEEN",
    Operator.IN: "IN",
    Operator.NOT_IN: "NOT IN",
}

_MAX_QUERIES = 30


def _number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else f"{value:g}"


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


def format_condition(condition: Condition, schema: Sequence[AttributeSchema]) -> str:
    name = schema[condition.attribute_index].name
    values = ",".join(_number(v) for v in condition.payload)
    if condition.operator in (Operator.EQ, Operator.NEQ):
        return f"{name} {_OPERATOR_TEXT[condition.operator]} {values}"
    return f"{name} {_OPERATOR_TEXT[condition.operator]} ({values})"


def format_query(query: Query, schema: Sequence[AttributeSchema]) -> str:
    active = query.active
    if not active:
        return "SELECT count(*)"
    return "SELECT count(*) WHERE " + " AND ".join(format_condition(c, schema) for c in active)


def format_multiset(multiset: QueryMultiset, schema: Sequence[AttributeSchema]) -> str:
    """Numbered query list; long multisets are elided with a count."""
    if not len(multiset):
        return "(empty multiset)"
    lines = [f"#{i:<3} {format_query(q, schema)}" for i, q in enumerate(multiset.queries[:_MAX_QUERIES])]
    remaining = len(multiset) - _MAX_QUERIES
    if remaining > 0:
        lines.append(f"... and {remaining} more queries")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


def format_game_result(result: GameResult) -> str:
    low, high = result.confidence_interval
    text = f"accuracy {result.accuracy:.2%} over {result.repetitions} games (95% CI {low:.2%} .. {high:.2%})"
    if result.abstentions:
        text += f", {result.abstentions} abstained"
    return text


def format_report(report: AttackReport) -> str:
    """Per-user table plus the aggregate line."""
    if not report.users:
        return "(no users attacked)"
    lines = [f"{'user':>8}  {'rep':>3}  {'accuracy':>8}  {'fitness':>7}  {'syntax':<12} status"]
    for user in report.users:
        lines.append(
            f"{user.user_id:>8}  {user.repetition:>3}  {user.accuracy:>8.2%}  "
            f"{user.fitness:>7.3f}  {user.syntax:<12} {user.status}"
        )
    summary = report.aggregate()
    lines.append(
        f"mean accuracy {summary['mean']:.2%} ± {summary['std']:.2%} over {summary['count']} attacks "
        f"(pooled 95% CI {summary['pooled_ci_low']:.2%} .. {summary['pooled_ci_high']:.2%})"
    )
    return "\n".join(lines)


def format_histogram(bins: Sequence[tuple[float, int]]) -> str:
    """Non-empty histogram bins as ``[start, end)  count  bar`` lines."""
    shown = [(start, count) for start, count in bins if count]
    if not shown:
        return "(empty histogram)"
    width = bins[1][0] - bins[0][0] if len(bins) > 1 else 1.0
    return "\n".join(
        f"[{start:6.1%}, {start + width:6.1%})  {count:>4}  {'#' * count}" for start, count in shown
    )
