"""Prompt templates for every pipeline stage plus parsing of model replies."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

PLACEHOLDER_NAMES = (
    "question",
    "schema",
    "subquestion",
    "subqueries",
    "sql",
    "error",
    "examples",
    "plan",
)

STAGE_TABLE_SELECTION = "table_selection"
STAGE_DECOMPOSITION = "decomposition"
STAGE_SUBQUERY_GENERATION = "subquery_generation"
STAGE_REFINEMENT = "refinement"
STAGE_MERGE_PLANNER = "merge_planner"
STAGE_MERGE_EXECUTOR = "merge_executor"
STAGE_COLUMN_SELECTION = "column_selection"
STAGE_BASELINE = "baseline"
STAGE_JUDGE = "judge"

# Placeholders each shipped stage template must bind.
REQUIRED_PLACEHOLDERS = {
    STAGE_TABLE_SELECTION: frozenset({"question", "schema"}),
    STAGE_DECOMPOSITION: frozenset({"question", "schema"}),
    STAGE_SUBQUERY_GENERATION: frozenset({"subquestion", "schema"}),
    STAGE_REFINEMENT: frozenset({"sql", "error"}),
    STAGE_MERGE_PLANNER: frozenset({"question", "subqueries"}),
    STAGE_MERGE_EXECUTOR: frozenset({"question", "schema", "subqueries", "plan"}),
    STAGE_COLUMN_SELECTION: frozenset({"question", "schema", "sql"}),
    STAGE_BASELINE: frozenset({"question", "schema"}),
    STAGE_JUDGE: frozenset({"question", "schema"}),
}

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDER_NAMES) + r")\}")


class RenderError(ValueError):
    def __init__(self, placeholder: str):
        super().__init__(f"missing required placeholder binding: {placeholder!r}")
        self.placeholder = placeholder


class SqlExtractionError(ValueError):
    """The model reply contains nothing recognizable as SQL."""


@dataclass(frozen=True)
class PromptTemplate:
    stage_label: str
    body: str
    required_placeholders: frozenset[str] = frozenset()

    def __post_init__(self):
        present = set(_PLACEHOLDER_RE.findall(self.body))
        missing = self.required_placeholders - present
        if missing:
            raise ValueError(
                f"template {self.stage_label!r} body lacks required"
                f" placeholder(s) {sorted(missing)}"
            )


@dataclass(frozen=True)
class FewShotExample:
    question: str
    sql: str

    def __post_init__(self):
        if not self.question or not self.sql:
            raise ValueError("few-shot question and sql must be non-empty")


def render(template: PromptTemplate, bindings: dict[str, str]) -> str:
    """Pure textual substitution; unbound optional placeholders become ''."""
    for name in template.required_placeholders:
        if name not in bindings:
            raise RenderError(name)
    return _PLACEHOLDER_RE.sub(lambda m: bindings.get(m.group(1), ""), template.body)


_NUMBERED_RE = re.compile(
    r"^\s*(?:(?:sub[- ]?question|sub[- ]?task|step|task)\s*)?\d+\s*[.):\-]\s*(.*\S)?\s*$",
    re.IGNORECASE,
)
_BULLET_RE = re.compile(r"^\s*[-*•]\s+(.*\S)\s*$")


def parse_subquestions(text: str) -> list[str]:
    """Extract an ordered sub-question list from a model reply.

    Recognizes numbered items (``1.``, ``2)``, ``Sub-question 3:``) and
    dash/star bullets. When no list pattern matches, the whole trimmed text
    is a single sub-question.
    """
    items = []
    for line in text.splitlines():
        match = _NUMBERED_RE.match(line) or _BULLET_RE.match(line)
        if match and match.group(1):
            items.append(match.group(1).strip())
    if items:
        return items
    whole = text.strip()
    return [whole] if whole else []


def parse_table_list(text: str) -> list[str]:
    """Extract table names from a reply expected to be a comma-separated list."""
    names = []
    for chunk in re.split(r"[,\n;]+", text):
        name = chunk.strip().strip("`'\"*").rstrip(".").strip()
        name = re.sub(r"^(?:\d+[.)]|-)\s*", "", name)
        if name:
            names.append(name)
    return names


_FENCE_RE = re.compile(r"```(?:[a-zA-Z0-9_+-]+[ \t]*\r?\n)?(.*?)```", re.DOTALL)
_SQL_START_RE = re.compile(r"\b(select|with)\b", re.IGNORECASE)


def extract_sql(text: str) -> str:
    """Isolate executable SQL from a model reply.

    The first fenced code block wins (language tag ignored); otherwise the
    text from the first SELECT/WITH onward, truncated after the statement's
    terminating semicolon when one appears outside string literals.
    """
    fence = _FENCE_RE.search(text)
    if fence:
        content = fence.group(1).strip()
        if content:
            return content
    match = _SQL_START_RE.search(text)
    if not match:
        raise SqlExtractionError("no SQL found in model output")
    return _cut_after_statement(text[match.start() :]).strip()


def _cut_after_statement(sql: str) -> str:
    i, n = 0, len(sql)
    while i < n:
        ch = sql[i]
        if ch == "'" or ch == '"' or ch == "`":
            i = _skip_quoted(sql, i, ch)
        elif sql.startswith("--", i):
            end = sql.find("\n", i)
            i = n if end == -1 else end + 1
        elif sql.startswith("/*", i):
            end = sql.find("*/", i + 2)
            i = n if end == -1 else end + 2
        elif ch == ";":
            return sql[: i + 1]
        else:
            i += 1
    return sql


def _skip_quoted(sql: str, start: int, quote: str) -> int:
    i = start + 1
    n = len(sql)
    while i < n:
        if sql[i] == quote:
            if i + 1 < n and sql[i + 1] == quote:
                i += 2
                continue
            return i + 1
        i += 1
    return n


def builtin_template_dir() -> Path:
    return Path(__file__).parent / "templates"


def load_templates(directory: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Load all stage templates from a directory (defaults to the shipped set)."""
    directory = Path(directory) if directory else builtin_template_dir()
    templates = {}
    for stage, required in REQUIRED_PLACEHOLDERS.items():
        path = directory / f"{stage}.txt"
        if not path.is_file():
            raise FileNotFoundError(f"missing prompt template: {path}")
        templates[stage] = PromptTemplate(
            stage_label=stage,
            body=path.read_text(encoding="utf-8"),
            required_placeholders=required,
        )
    return templates


def load_fewshot(path: str | Path | None = None) -> list[FewShotExample]:
    path = Path(path) if path else builtin_template_dir() / "fewshot.json"
    data = json.loads(path.read_text(encoding="utf-8"))
    return [FewShotExample(question=row["question"], sql=row["sql"]) for row in data]


def format_fewshot(examples: list[FewShotExample]) -> str:
    blocks = [f"Question: {ex.question}\nSQL: {ex.sql}" for ex in examples]
    return "\n\n".join(blocks)


def prompt_digest(templates: dict[str, PromptTemplate], fewshot: list[FewShotExample]) -> str:
    """Stable digest of the prompt set, used in benchmark cache keys."""
    hasher = hashlib.sha256()
    for stage in sorted(templates):
        hasher.update(stage.encode())
        hasher.update(b"\x00")
        hasher.update(templates[stage].body.encode())
        hasher.update(b"\x00")
    for example in fewshot:
        hasher.update(example.question.encode())
        hasher.update(b"\x00")
        hasher.update(example.sql.encode())
        hasher.update(b"\x00")
    return hasher.hexdigest()
