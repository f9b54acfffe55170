"""Read-only SQLite execution and execution-accuracy result comparison."""

from __future__ import annotations

import math
import sqlite3
import time
from dataclasses import dataclass
from pathlib import Path

from .dataset import BenchmarkExample

DEFAULT_TIMEOUT_MS = 30000
DEFAULT_FLOAT_TOLERANCE = 1e-6

# How many SQLite VM instructions run between progress-handler checks.
_PROGRESS_INTERVAL = 1000

STATUS_OK = "ok"
STATUS_SQL_ERROR = "sql_error"
STATUS_TIMEOUT = "timeout"


class DatabaseOpenError(OSError):
    """The database file is missing or cannot be opened at all."""


class DatasetIntegrityError(ValueError):
    """A gold query failed to execute; the dataset itself is broken."""


@dataclass(frozen=True)
class ResultTable:
    column_count: int
    rows: tuple[tuple, ...]


@dataclass(frozen=True)
class ExecOutcome:
    status: str
    result: ResultTable | None = None
    error_message: str = ""
    elapsed_ms: int = 0

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


@dataclass(frozen=True)
class ComparisonVerdict:
    equal: bool
    order_sensitive: bool
    reason: str = ""


@dataclass(frozen=True)
class AccuracyOutcome:
    """An execution-accuracy verdict with both execution outcomes attached."""

    verdict: ComparisonVerdict
    gold: ExecOutcome
    predicted: ExecOutcome | None


def execute_sql(db_path: str | Path, sql: str, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> ExecOutcome:
    """Run one statement against a SQLite file opened read-only.

    Mutating statements fail under the read-only open and surface as
    sql_error. A query whose wall time exceeds timeout_ms is interrupted
    and reported as timeout.
    """
    db_path = Path(db_path)
    if not db_path.is_file():
        raise DatabaseOpenError(f"database file not found: {db_path}")

    started = time.monotonic()
    deadline = started + timeout_ms / 1000.0
    timed_out = False

    def check_deadline():
        nonlocal timed_out
        if time.monotonic() > deadline:
            timed_out = True
            return 1
        return 0

    try:
        connection = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
    except sqlite3.Error as exc:
        raise DatabaseOpenError(f"cannot open {db_path}: {exc}") from exc

    try:
        connection.set_progress_handler(check_deadline, _PROGRESS_INTERVAL)
        cursor = connection.execute(sql)
        rows = tuple(tuple(row) for row in cursor.fetchall())
        column_count = len(cursor.description) if cursor.description else 0
        elapsed = int((time.monotonic() - started) * 1000)
        return ExecOutcome(
            status=STATUS_OK,
            result=ResultTable(column_count=column_count, rows=rows),
            elapsed_ms=elapsed,
        )
    except (sqlite3.Error, sqlite3.Warning) as exc:
        elapsed = int((time.monotonic() - started) * 1000)
        if timed_out:
            return ExecOutcome(
                status=STATUS_TIMEOUT,
                error_message=f"query exceeded {timeout_ms} ms",
                elapsed_ms=elapsed,
            )
        return ExecOutcome(status=STATUS_SQL_ERROR, error_message=str(exc), elapsed_ms=elapsed)
    finally:
        connection.close()


def has_top_level_order_by(sql: str) -> bool:
    """True iff an ORDER BY appears outside every parenthesized subquery.

    Paren depth is tracked with awareness of string literals, quoted
    identifiers, and both comment styles; malformed SQL is scanned
    best-effort.
    """
    i, depth, n = 0, 0, len(sql)
    while i < n:
        ch = sql[i]
        if ch == "'" or ch == '"' or ch == "`":
            i = _skip_quoted(sql, i, ch)
        elif ch == "[":
            end = sql.find("]", i + 1)
            i = n if end == -1 else end + 1
        elif sql.startswith("--", i):
            end = sql.find("\n", i)
            i = n if end == -1 else end + 1
        elif sql.startswith("/*", i):
            end = sql.find("*/", i + 2)
            i = n if end == -1 else end + 2
        elif ch == "(":
            depth += 1
            i += 1
        elif ch == ")":
            depth = max(depth - 1, 0)
            i += 1
        elif depth == 0 and _word_at(sql, i, "ORDER"):
            j = _skip_separators(sql, i + 5)
            if _word_at(sql, j, "BY"):
                return True
            i += 5
        else:
            i += 1
    return False


def _skip_quoted(sql: str, start: int, quote: str) -> int:
    i = start + 1
    n = len(sql)
    while i < n:
        if sql[i] == quote:
            if i + 1 < n and sql[i + 1] == quote:  # doubled quote escape
                i += 2
                continue
            return i + 1
        i += 1
    return n


def _is_word_char(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


def _word_at(sql: str, i: int, word: str) -> bool:
    end = i + len(word)
    if sql[i:end].upper() != word:
        return False
    before_ok = i == 0 or not _is_word_char(sql[i - 1])
    after_ok = end >= len(sql) or not _is_word_char(sql[end])
    return before_ok and after_ok


def _skip_separators(sql: str, i: int) -> int:
    n = len(sql)
    while i < n:
        if sql[i].isspace():
            i += 1
        elif sql.startswith("--", i):
            end = sql.find("\n", i)
            i = n if end == -1 else end + 1
        elif sql.startswith("/*", i):
            end = sql.find("*/", i + 2)
            i = n if end == -1 else end + 2
        else:
            break
    return i


def _cell_sort_key(cell):
    if cell is None:
        return (0, 0.0)
    if isinstance(cell, bool):
        return (1, float(cell))
    if isinstance(cell, (int, float)):
        return (1, float(cell))
    if isinstance(cell, bytes):
        return (3, cell)
    return (2, str(cell))


def _cells_equal(a, b, float_tolerance: float) -> bool:
    if a is None or b is None:
        return a is None and b is None
    a_num = isinstance(a, (int, float)) and not isinstance(a, bool)
    b_num = isinstance(b, (int, float)) and not isinstance(b, bool)
    if a_num and b_num:
        fa, fb = float(a), float(b)
        if math.isnan(fa) or math.isnan(fb):
            return math.isnan(fa) and math.isnan(fb)
        return abs(fa - fb) <= float_tolerance
    if type(a) is not type(b):
        return False
    return a == b


def compare_results(
    gold: ResultTable,
    pred: ResultTable,
    order_sensitive: bool,
    float_tolerance: float = DEFAULT_FLOAT_TOLERANCE,
) -> ComparisonVerdict:
    """Compare two result tables.

    Rows are multisets unless order_sensitive; duplicate rows count. Column
    order within a row always matters. Numeric cells (integer or real)
    compare within the absolute tolerance, text and blobs byte-exact, and
    null equals only null.
    """
    if gold.column_count != pred.column_count:
        return ComparisonVerdict(
            equal=False,
            order_sensitive=order_sensitive,
            reason=(
                f"column count differs: expected {gold.column_count},"
                f" got {pred.column_count}"
            ),
        )
    if len(gold.rows) != len(pred.rows):
        return ComparisonVerdict(
            equal=False,
            order_sensitive=order_sensitive,
            reason=f"row count differs: expected {len(gold.rows)}, got {len(pred.rows)}",
        )

    gold_rows, pred_rows = list(gold.rows), list(pred.rows)
    if not order_sensitive:
        key = lambda row: tuple(_cell_sort_key(c) for c in row)
        gold_rows.sort(key=key)
        pred_rows.sort(key=key)

    for index, (gold_row, pred_row) in enumerate(zip(gold_rows, pred_rows)):
        for gold_cell, pred_cell in zip(gold_row, pred_row):
            if not _cells_equal(gold_cell, pred_cell, float_tolerance):
                return ComparisonVerdict(
                    equal=False,
                    order_sensitive=order_sensitive,
                    reason=f"row {index} differs: expected {gold_row!r}, got {pred_row!r}",
                )
    return ComparisonVerdict(equal=True, order_sensitive=order_sensitive)


def execution_accuracy(
    example: BenchmarkExample,
    predicted_sql: str,
    db_path: str | Path,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    float_tolerance: float = DEFAULT_FLOAT_TOLERANCE,
) -> AccuracyOutcome:
    """Score a prediction by comparing execution results against the gold query.

    Row order is significant only when the gold query has a top-level
    ORDER BY. A prediction that is empty, errors, or times out is unequal.
    A gold query that fails to execute is a dataset error, not a model error.
    """
    gold_outcome = execute_sql(db_path, example.gold_sql, timeout_ms)
    if not gold_outcome.ok:
        raise DatasetIntegrityError(
            f"gold query failed on {example.db_id!r}"
            f" ({example.question[:60]!r}): {gold_outcome.error_message}"
        )

    order_sensitive = has_top_level_order_by(example.gold_sql)
    if not predicted_sql.strip():
        verdict = ComparisonVerdict(
            equal=False, order_sensitive=order_sensitive, reason="no predicted SQL"
        )
        return AccuracyOutcome(verdict=verdict, gold=gold_outcome, predicted=None)

    pred_outcome = execute_sql(db_path, predicted_sql, timeout_ms)
    if not pred_outcome.ok:
        verdict = ComparisonVerdict(
            equal=False,
            order_sensitive=order_sensitive,
            reason=f"predicted query {pred_outcome.status}: {pred_outcome.error_message}",
        )
        return AccuracyOutcome(verdict=verdict, gold=gold_outcome, predicted=pred_outcome)

    verdict = compare_results(
        gold_outcome.result, pred_outcome.result, order_sensitive, float_tolerance
    )
    return AccuracyOutcome(verdict=verdict, gold=gold_outcome, predicted=pred_outcome)
