"""The divide-and-merge pipeline: table selection, question decomposition,
per-sub-question SQL generation with bounded refinement, merging, and column
selection. Also the one-step few-shot baseline parser."""

from __future__ import annotations

import functools
import json
import time
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import (
    BenchmarkExample,
    DatabaseSchema,
    ReducedSchema,
    SchemaReductionError,
    full_reduction,
    reduce_schema,
    serialize_schema,
)
from .executor import DEFAULT_TIMEOUT_MS, execute_sql
from .llm import (
    ModelEndpoint,
    ModelPair,
    ProviderError,
    TranscriptEntry,
    transcript_entry_to_dict,
)
from .prompts import (
    STAGE_BASELINE,
    STAGE_COLUMN_SELECTION,
    STAGE_DECOMPOSITION,
    STAGE_MERGE_EXECUTOR,
    STAGE_MERGE_PLANNER,
    STAGE_REFINEMENT,
    STAGE_SUBQUERY_GENERATION,
    STAGE_TABLE_SELECTION,
    FewShotExample,
    PromptTemplate,
    SqlExtractionError,
    extract_sql,
    format_fewshot,
    load_fewshot,
    load_templates,
    parse_subquestions,
    parse_table_list,
    render,
)

MERGE_LAST_SUBQUERY = "last_subquery"
MERGE_PLANNER_EXECUTOR = "planner_executor"
MERGE_STRATEGIES = (MERGE_LAST_SUBQUERY, MERGE_PLANNER_EXECUTOR)

# Hard safety cap on the refinement loop, regardless of configuration.
MAX_REFINEMENT_CAP = 10


@dataclass
class PipelineConfig:
    merge_strategy: str = MERGE_PLANNER_EXECUTOR
    column_selection_enabled: bool = True
    max_refinements: int = 3
    parallel_subqueries: bool = False
    subquery_fanout_width: int = 4

    def __post_init__(self):
        if self.merge_strategy not in MERGE_STRATEGIES:
            raise ValueError(f"unknown merge strategy {self.merge_strategy!r}")
        if not 0 <= self.max_refinements <= MAX_REFINEMENT_CAP:
            raise ValueError(
                f"max_refinements must be in 0..{MAX_REFINEMENT_CAP}"
            )
        if self.subquery_fanout_width < 1:
            raise ValueError("subquery_fanout_width must be >= 1")


@dataclass(frozen=True)
class SubQuestion:
    index: int  # 1-based
    text: str


@dataclass
class SubQuery:
    for_index: int
    sql: str
    refinement_attempts: int = 0
    valid: bool = False


@dataclass
class PipelineTrace:
    """Full record of one question's journey through a pipeline arm."""

    example_id: str
    reduced_schema: ReducedSchema | None = None
    subquestions: list[SubQuestion] = field(default_factory=list)
    subqueries: list[SubQuery] = field(default_factory=list)
    merge_plan_text: str = ""
    merged_sql: str = ""
    final_sql: str = ""
    transcript: list[TranscriptEntry] = field(default_factory=list)
    stage_timings_ms: dict[str, int] = field(default_factory=dict)
    merge_fell_back: bool = False
    error: str = ""


@functools.lru_cache(maxsize=1)
def _default_templates() -> dict[str, PromptTemplate]:
    return load_templates()


@functools.lru_cache(maxsize=1)
def _default_fewshot() -> tuple[FewShotExample, ...]:
    return tuple(load_fewshot())


def _generate_and_refine(
    first_prompt: str,
    *,
    endpoint: ModelEndpoint,
    stage_label: str,
    task_text: str,
    schema_text: str,
    db_path: str | Path,
    max_refinements: int,
    templates: dict[str, PromptTemplate],
    transcript: list[TranscriptEntry],
    timeout_ms: int,
) -> tuple[str, int, bool]:
    """Generate SQL, execute it, and re-prompt with the engine error.

    An execution error or a failed SQL extraction counts as a failed
    attempt; an empty result set does not. Returns (sql, refinement
    attempts used, executed without error). sql is '' when no attempt ever
    produced extractable SQL.
    """
    prompt = first_prompt
    sql = ""
    for attempt in range(max_refinements + 1):
        reply = endpoint.ask(
            prompt, transcript=transcript, stage_label=stage_label, attempt_index=attempt
        )
        try:
            sql = extract_sql(reply)
        except SqlExtractionError as exc:
            error_text = str(exc)
        else:
            outcome = execute_sql(db_path, sql, timeout_ms)
            if outcome.ok:
                return sql, attempt, True
            error_text = outcome.error_message
        if attempt == max_refinements:
            break
        prompt = render(
            templates[STAGE_REFINEMENT],
            {"question": task_text, "schema": schema_text, "sql": sql, "error": error_text},
        )
    return sql, max_refinements, False


def select_tables(
    question: str,
    schema: DatabaseSchema,
    reasoning_model: ModelEndpoint,
    *,
    templates: dict[str, PromptTemplate] | None = None,
    transcript: list[TranscriptEntry] | None = None,
) -> ReducedSchema:
    """Ask the reasoning model which tables the question needs.

    Falls back to the full schema when the reply names no known table; the
    reduction never invents tables.
    """
    templates = templates or _default_templates()
    prompt = render(
        templates[STAGE_TABLE_SELECTION],
        {"question": question, "schema": serialize_schema(schema)},
    )
    reply = reasoning_model.ask(
        prompt, transcript=transcript, stage_label=STAGE_TABLE_SELECTION
    )
    try:
        return reduce_schema(schema, parse_table_list(reply))
    except SchemaReductionError:
        return full_reduction(schema)


def decompose(
    question: str,
    reduced_schema: ReducedSchema,
    reasoning_model: ModelEndpoint,
    *,
    templates: dict[str, PromptTemplate] | None = None,
    transcript: list[TranscriptEntry] | None = None,
) -> list[SubQuestion]:
    """Split the question into ordered sub-questions (at least one)."""
    templates = templates or _default_templates()
    prompt = render(
        templates[STAGE_DECOMPOSITION],
        {"question": question, "schema": serialize_schema(reduced_schema)},
    )
    reply = reasoning_model.ask(
        prompt, transcript=transcript, stage_label=STAGE_DECOMPOSITION
    )
    parsed = parse_subquestions(reply) or [question]
    return [SubQuestion(index=i + 1, text=text) for i, text in enumerate(parsed)]


def _format_prior(prior: list[SubQuery]) -> str:
    if not prior:
        return "(none)"
    return "\n\n".join(f"Sub-query {sq.for_index}:\n{sq.sql}" for sq in prior if sq.sql)


def generate_subquery(
    subquestion: SubQuestion,
    reduced_schema: ReducedSchema,
    coding_model: ModelEndpoint,
    fewshot: list[FewShotExample],
    db_path: str | Path,
    max_refinements: int,
    *,
    prior: list[SubQuery] | None = None,
    templates: dict[str, PromptTemplate] | None = None,
    transcript: list[TranscriptEntry] | None = None,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> SubQuery:
    """Generate SQL for one sub-question with the execute-and-refine loop."""
    templates = templates or _default_templates()
    transcript = transcript if transcript is not None else []
    schema_text = serialize_schema(reduced_schema)
    prompt = render(
        templates[STAGE_SUBQUERY_GENERATION],
        {
            "subquestion": subquestion.text,
            "schema": schema_text,
            "examples": format_fewshot(fewshot),
            "subqueries": _format_prior(prior or []),
        },
    )
    sql, attempts, valid = _generate_and_refine(
        prompt,
        endpoint=coding_model,
        stage_label=STAGE_SUBQUERY_GENERATION,
        task_text=subquestion.text,
        schema_text=schema_text,
        db_path=db_path,
        max_refinements=max_refinements,
        templates=templates,
        transcript=transcript,
        timeout_ms=timeout_ms,
    )
    return SubQuery(
        for_index=subquestion.index, sql=sql, refinement_attempts=attempts, valid=valid
    )


def merge_last(subqueries: list[SubQuery]) -> str:
    """Merge strategy 1: the last sub-query is the answer."""
    if not subqueries:
        raise ValueError("merge_last requires at least one sub-query")
    return subqueries[-1].sql


def _format_pairs(subquestions: list[SubQuestion], subqueries: list[SubQuery]) -> str:
    blocks = []
    for sq, query in zip(subquestions, subqueries):
        blocks.append(f"Sub-question {sq.index}: {sq.text}\nSub-query {sq.index}:\n{query.sql}")
    return "\n\n".join(blocks)


def merge_plan_execute(
    question: str,
    subquestions: list[SubQuestion],
    subqueries: list[SubQuery],
    reasoning_model: ModelEndpoint,
    coding_model: ModelEndpoint,
    reduced_schema: ReducedSchema,
    db_path: str | Path,
    max_refinements: int,
    *,
    templates: dict[str, PromptTemplate] | None = None,
    transcript: list[TranscriptEntry] | None = None,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> tuple[str, str, bool]:
    """Merge strategy 2: a reasoning model plans the merge, a coding model
    emits the final SQL, refined against the database.

    Returns (plan text, final SQL, fell_back). When the executor never
    produces extractable SQL the merge falls back to the last sub-query.
    """
    if not subqueries:
        raise ValueError("merge_plan_execute requires at least one sub-query")
    templates = templates or _default_templates()
    pairs_text = _format_pairs(subquestions, subqueries)

    plan_prompt = render(
        templates[STAGE_MERGE_PLANNER], {"question": question, "subqueries": pairs_text}
    )
    plan_text = reasoning_model.ask(
        plan_prompt, transcript=transcript, stage_label=STAGE_MERGE_PLANNER
    )

    schema_text = serialize_schema(reduced_schema)
    executor_prompt = render(
        templates[STAGE_MERGE_EXECUTOR],
        {
            "question": question,
            "schema": schema_text,
            "subqueries": pairs_text,
            "plan": plan_text,
        },
    )
    sql, _attempts, _valid = _generate_and_refine(
        executor_prompt,
        endpoint=coding_model,
        stage_label=STAGE_MERGE_EXECUTOR,
        task_text=question,
        schema_text=schema_text,
        db_path=db_path,
        max_refinements=max_refinements,
        templates=templates,
        transcript=transcript if transcript is not None else [],
        timeout_ms=timeout_ms,
    )
    if not sql:
        return plan_text, merge_last(subqueries), True
    return plan_text, sql, False


def column_select(
    question: str,
    schema_context: ReducedSchema,
    merged_sql: str,
    reasoning_model: ModelEndpoint,
    db_path: str | Path,
    max_refinements: int,
    *,
    templates: dict[str, PromptTemplate] | None = None,
    transcript: list[TranscriptEntry] | None = None,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> str:
    """Align the SELECT clause of the merged query with the question.

    The revision goes through the execute-and-refine loop; if every attempt
    fails the merged query is returned unchanged, so column selection never
    makes a runnable query unrunnable.
    """
    if not merged_sql:
        raise ValueError("column_select requires a non-empty merged query")
    templates = templates or _default_templates()
    schema_text = serialize_schema(schema_context)
    prompt = render(
        templates[STAGE_COLUMN_SELECTION],
        {"question": question, "schema": schema_text, "sql": merged_sql},
    )
    sql, _attempts, valid = _generate_and_refine(
        prompt,
        endpoint=reasoning_model,
        stage_label=STAGE_COLUMN_SELECTION,
        task_text=question,
        schema_text=schema_text,
        db_path=db_path,
        max_refinements=max_refinements,
        templates=templates,
        transcript=transcript if transcript is not None else [],
        timeout_ms=timeout_ms,
    )
    if not valid or not sql:
        return merged_sql
    return sql


@contextmanager
def _timed(trace: PipelineTrace, stage: str):
    started = time.monotonic()
    try:
        yield
    finally:
        trace.stage_timings_ms[stage] = int((time.monotonic() - started) * 1000)


def run_divide_and_merge(
    example: BenchmarkExample,
    schema: DatabaseSchema,
    config: PipelineConfig,
    models: ModelPair,
    db_path: str | Path,
    *,
    example_id: str = "",
    templates: dict[str, PromptTemplate] | None = None,
    fewshot: list[FewShotExample] | None = None,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> PipelineTrace:
    """Run the full divide-and-merge pipeline for one example.

    Stages run in order: table selection, decomposition, per-sub-question
    generation (optionally fanned out), merge, and column selection when
    enabled. A provider failure yields a trace with empty final SQL and an
    error annotation instead of raising.
    """
    templates = templates or _default_templates()
    fewshot = list(fewshot) if fewshot is not None else list(_default_fewshot())
    trace = PipelineTrace(example_id=example_id or example.db_id)
    total_started = time.monotonic()

    try:
        with _timed(trace, STAGE_TABLE_SELECTION):
            reduced = select_tables(
                example.question,
                schema,
                models.reasoning,
                templates=templates,
                transcript=trace.transcript,
            )
        trace.reduced_schema = reduced

        with _timed(trace, STAGE_DECOMPOSITION):
            trace.subquestions = decompose(
                example.question,
                reduced,
                models.reasoning,
                templates=templates,
                transcript=trace.transcript,
            )

        with _timed(trace, STAGE_SUBQUERY_GENERATION):
            trace.subqueries = _generate_all(
                trace.subquestions,
                reduced,
                models.coding,
                fewshot,
                db_path,
                config,
                templates,
                trace.transcript,
                timeout_ms,
            )

        with _timed(trace, "merge"):
            if config.merge_strategy == MERGE_LAST_SUBQUERY:
                trace.merged_sql = merge_last(trace.subqueries)
            else:
                plan, merged, fell_back = merge_plan_execute(
                    example.question,
                    trace.subquestions,
                    trace.subqueries,
                    models.reasoning,
                    models.coding,
                    reduced,
                    db_path,
                    config.max_refinements,
                    templates=templates,
                    transcript=trace.transcript,
                    timeout_ms=timeout_ms,
                )
                trace.merge_plan_text = plan
                trace.merged_sql = merged
                trace.merge_fell_back = fell_back

        if config.column_selection_enabled and trace.merged_sql:
            with _timed(trace, STAGE_COLUMN_SELECTION):
                trace.final_sql = column_select(
                    example.question,
                    reduced,
                    trace.merged_sql,
                    models.reasoning,
                    db_path,
                    config.max_refinements,
                    templates=templates,
                    transcript=trace.transcript,
                    timeout_ms=timeout_ms,
                )
        else:
            trace.final_sql = trace.merged_sql
    except ProviderError as exc:
        trace.error = f"provider error: {exc}"
        trace.final_sql = ""

    trace.stage_timings_ms["total"] = int((time.monotonic() - total_started) * 1000)
    return trace


def _generate_all(
    subquestions: list[SubQuestion],
    reduced: ReducedSchema,
    coding_model: ModelEndpoint,
    fewshot: list[FewShotExample],
    db_path: str | Path,
    config: PipelineConfig,
    templates: dict[str, PromptTemplate],
    transcript: list[TranscriptEntry],
    timeout_ms: int,
) -> list[SubQuery]:
    if config.parallel_subqueries and len(subquestions) > 1:
        # Fan out with per-task transcripts, reassembled in index order so
        # the trace does not depend on completion order. Prior sub-queries
        # do not exist yet in this mode, so prompts carry none.
        side_transcripts: list[list[TranscriptEntry]] = [[] for _ in subquestions]

        def task(i: int) -> SubQuery:
            return generate_subquery(
                subquestions[i],
                reduced,
                coding_model,
                fewshot,
                db_path,
                config.max_refinements,
                prior=None,
                templates=templates,
                transcript=side_transcripts[i],
                timeout_ms=timeout_ms,
            )

        width = min(config.subquery_fanout_width, len(subquestions))
        with ThreadPoolExecutor(max_workers=width) as pool:
            results = list(pool.map(task, range(len(subquestions))))
        for side in side_transcripts:
            transcript.extend(side)
        return results

    subqueries: list[SubQuery] = []
    for subquestion in subquestions:
        subqueries.append(
            generate_subquery(
                subquestion,
                reduced,
                coding_model,
                fewshot,
                db_path,
                config.max_refinements,
                prior=subqueries,
                templates=templates,
                transcript=transcript,
                timeout_ms=timeout_ms,
            )
        )
    return subqueries


def run_baseline(
    example: BenchmarkExample,
    schema: DatabaseSchema,
    coding_model: ModelEndpoint,
    fewshot: list[FewShotExample],
    db_path: str | Path,
    max_refinements: int = 3,
    *,
    example_id: str = "",
    templates: dict[str, PromptTemplate] | None = None,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> PipelineTrace:
    """One-step few-shot generation over the full schema, with the same
    execute-and-refine loop as the pipeline arm."""
    templates = templates or _default_templates()
    trace = PipelineTrace(example_id=example_id or example.db_id)
    total_started = time.monotonic()

    schema_text = serialize_schema(schema)
    prompt = render(
        templates[STAGE_BASELINE],
        {
            "question": example.question,
            "schema": schema_text,
            "examples": format_fewshot(fewshot),
        },
    )
    try:
        with _timed(trace, STAGE_BASELINE):
            sql, _attempts, _valid = _generate_and_refine(
                prompt,
                endpoint=coding_model,
                stage_label=STAGE_BASELINE,
                task_text=example.question,
                schema_text=schema_text,
                db_path=db_path,
                max_refinements=max_refinements,
                templates=templates,
                transcript=trace.transcript,
                timeout_ms=timeout_ms,
            )
        trace.merged_sql = sql
        trace.final_sql = sql
    except ProviderError as exc:
        trace.error = f"provider error: {exc}"
        trace.final_sql = ""

    trace.stage_timings_ms["total"] = int((time.monotonic() - total_started) * 1000)
    return trace


def trace_to_dict(trace: PipelineTrace, include_timings: bool = True) -> dict:
    """JSON-serializable form of the trace (documented in the README)."""
    reduced = None
    if trace.reduced_schema is not None:
        reduced = {
            "source_db_id": trace.reduced_schema.source_db_id,
            "kept_table_names": list(trace.reduced_schema.kept_table_names),
        }
    data = {
        "example_id": trace.example_id,
        "reduced_schema": reduced,
        "subquestions": [
            {"index": sq.index, "text": sq.text} for sq in trace.subquestions
        ],
        "subqueries": [
            {
                "for_index": sq.for_index,
                "sql": sq.sql,
                "refinement_attempts": sq.refinement_attempts,
                "valid": sq.valid,
            }
            for sq in trace.subqueries
        ],
        "merge_plan_text": trace.merge_plan_text,
        "merged_sql": trace.merged_sql,
        "final_sql": trace.final_sql,
        "merge_fell_back": trace.merge_fell_back,
        "error": trace.error,
        "transcript": [transcript_entry_to_dict(e) for e in trace.transcript],
    }
    if include_timings:
        data["stage_timings_ms"] = dict(trace.stage_timings_ms)
    else:
        # Latency fields vary run to run; strip them from the canonical form.
        for entry in data["transcript"]:
            entry["response"]["latency_ms"] = 0
    return data


def canonical_trace_bytes(trace: PipelineTrace) -> bytes:
    """Deterministic serialization used for byte-level trace comparison."""
    return json.dumps(
        trace_to_dict(trace, include_timings=False), sort_keys=True, indent=2
    ).encode("utf-8")


def write_trace(path: str | Path, trace: PipelineTrace) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(trace_to_dict(trace), sort_keys=True, indent=2), encoding="utf-8"
    )
