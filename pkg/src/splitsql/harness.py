"""Benchmark orchestration over both pipeline arms, result caching, report
formulas (execution accuracy, disagreement, oracle routing, router sweep,
schema-complexity correlations), and report emission.

Report percentages are computed as exact rationals (``fractions.Fraction``)
so identities such as oracle = module EX + baseline-only hold exactly;
rounding to two decimals happens only at emission.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .dataset import (
    BenchmarkExample,
    DatabaseSchema,
    extract_features,
    load_examples,
    load_schemas,
)
from .executor import (
    DEFAULT_FLOAT_TOLERANCE,
    DEFAULT_TIMEOUT_MS,
    DatabaseOpenError,
    DatasetIntegrityError,
    execution_accuracy,
)
from .llm import KIND_HTTP, ModelEndpoint, ModelPair, ProviderConfig, write_transcript
from .pipeline import (
    MERGE_LAST_SUBQUERY,
    MERGE_PLANNER_EXECUTOR,
    PipelineConfig,
    PipelineTrace,
    run_baseline,
    run_divide_and_merge,
    write_trace,
)
from .prompts import load_fewshot, load_templates, prompt_digest
from .router import (
    BRANCH_BASELINE,
    BRANCH_DIVIDE_AND_MERGE,
    KIND_HEURISTIC,
    KIND_JUDGE,
    KIND_LOGISTIC,
    UndefinedAccuracyError,
    load_router_model,
    route_heuristic,
    route_judge,
    route_logistic,
)

ARM_BASELINE = "baseline"
ARM_MODULE = "module"
ARM_BOTH = "both"
ARM_ROUTED = "routed"
ARMS = (ARM_BASELINE, ARM_MODULE, ARM_BOTH, ARM_ROUTED)

DEFAULT_SWEEP_POINTS = tuple(i / 10 for i in range(11))

STRATEGY_LABELS = {
    MERGE_LAST_SUBQUERY: "Last Sub-query",
    MERGE_PLANNER_EXECUTOR: "Planner&Executor",
}


class EmptyRecordsError(ValueError):
    """A report quantity was requested over zero records."""


class UndefinedCorrelationError(ValueError):
    """Correlation is undefined: zero variance or too few groups."""


@dataclass
class PerExampleRecord:
    """Per-question outcome of a benchmark run.

    Correctness bits are 0/1 when the arm ran and None when it did not
    (single-arm and routed runs leave the other arm unscored).
    """

    example_id: str
    db_id: str
    table_count: int
    baseline_correct: int | None = None
    module_correct: int | None = None
    route_taken: str = ""
    final_sql_baseline: str = ""
    final_sql_module: str = ""
    trace_paths: tuple[str, str] = ("", "")
    error: str = ""


@dataclass
class EvalReport:
    n: int
    ex_baseline: Fraction | None = None
    ex_module: Fraction | None = None
    module_only: Fraction | None = None
    baseline_only: Fraction | None = None
    ex_oracle: Fraction | None = None
    ex_routed: Fraction | None = None
    sweep: list[tuple[float, Fraction]] = field(default_factory=list)
    pearson_r: float | None = None
    spearman_rho: float | None = None
    ablation_rows: list[tuple[str, float, float]] = field(default_factory=list)
    realized_router_accuracy: float | None = None


@dataclass
class EndpointSpec:
    """HTTP endpoint settings for one logical model role."""

    base_url: str
    model_id: str
    api_key_env_var: str = ""
    temperature: float = 0.0
    max_tokens: int = 1024
    request_timeout_ms: int = 60000
    max_retries: int = 2
    retry_backoff_ms: int = 250
    stage_temperatures: dict[str, float] = field(default_factory=dict)

    def build(self) -> ModelEndpoint:
        provider = ProviderConfig(
            kind=KIND_HTTP,
            base_url=self.base_url,
            api_key_env_var=self.api_key_env_var,
            request_timeout_ms=self.request_timeout_ms,
            max_retries=self.max_retries,
            retry_backoff_ms=self.retry_backoff_ms,
        )
        return ModelEndpoint(
            provider=provider,
            model_id=self.model_id,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            stage_temperatures=dict(self.stage_temperatures),
        )


@dataclass
class RunConfig:
    tables_file: Path
    examples_file: Path
    run_dir: Path
    reasoning: EndpointSpec | None = None
    coding: EndpointSpec | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    router_kind: str = KIND_HEURISTIC
    table_threshold: int = 5
    router_model_file: Path | None = None
    worker_count: int = 1
    cache_dir: Path | None = None
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    float_tolerance: float = DEFAULT_FLOAT_TOLERANCE
    prompts_dir: Path | None = None
    fewshot_file: Path | None = None
    limit: int | None = None
    run_seed: int = 0  # reserved; every default is already deterministic
    save_traces: bool = True

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")


def load_config(path: str | Path) -> RunConfig:
    """Load the JSON run configuration (paths resolve relative to the file)."""
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent

    def resolve(value: str | None) -> Path | None:
        if value is None:
            return None
        candidate = Path(value)
        return candidate if candidate.is_absolute() else base / candidate

    dataset = raw.get("dataset", {})
    root = resolve(dataset.get("root")) or base
    tables_file = resolve(dataset.get("tables")) or root / "tables.json"
    examples_file = resolve(dataset.get("examples")) or root / "examples.json"

    llm_section = raw.get("llm", {})

    def endpoint(section_name: str) -> EndpointSpec | None:
        section = llm_section.get(section_name)
        if not section:
            return None
        return EndpointSpec(
            base_url=section["base_url"],
            model_id=section["model_id"],
            api_key_env_var=section.get("api_key_env_var", ""),
            temperature=section.get("temperature", 0.0),
            max_tokens=section.get("max_tokens", 1024),
            request_timeout_ms=section.get("request_timeout_ms", 60000),
            max_retries=section.get("max_retries", 2),
            retry_backoff_ms=section.get("retry_backoff_ms", 250),
            stage_temperatures=section.get("stage_temperatures", {}),
        )

    pipeline_section = raw.get("pipeline", {})
    pipeline = PipelineConfig(
        merge_strategy=pipeline_section.get("merge_strategy", MERGE_PLANNER_EXECUTOR),
        column_selection_enabled=pipeline_section.get("column_selection", True),
        max_refinements=pipeline_section.get("max_refinements", 3),
        parallel_subqueries=pipeline_section.get("parallel_subqueries", False),
        subquery_fanout_width=pipeline_section.get("subquery_fanout_width", 4),
    )

    executor_section = raw.get("executor", {})
    router_section = raw.get("router", {})
    harness_section = raw.get("harness", {})
    prompts_section = raw.get("prompts", {})

    return RunConfig(
        tables_file=tables_file,
        examples_file=examples_file,
        run_dir=resolve(harness_section.get("run_dir")) or base / "runs" / "latest",
        reasoning=endpoint("reasoning_model"),
        coding=endpoint("coding_model"),
        pipeline=pipeline,
        router_kind=router_section.get("kind", KIND_HEURISTIC),
        table_threshold=router_section.get("table_threshold", 5),
        router_model_file=resolve(router_section.get("model_file")),
        worker_count=harness_section.get("worker_count", 1),
        cache_dir=resolve(harness_section.get("cache_dir")),
        timeout_ms=executor_section.get("timeout_ms", DEFAULT_TIMEOUT_MS),
        float_tolerance=executor_section.get("float_tolerance", DEFAULT_FLOAT_TOLERANCE),
        prompts_dir=resolve(prompts_section.get("dir")),
        fewshot_file=resolve(prompts_section.get("fewshot_file")),
        limit=harness_section.get("limit"),
        run_seed=harness_section.get("run_seed", 0),
    )


# ---------------------------------------------------------------------------
# Report formulas
# ---------------------------------------------------------------------------


def _bit(record: PerExampleRecord, which: str) -> int | None:
    return record.baseline_correct if which == "baseline" else record.module_correct


def _require_bits(records: list[PerExampleRecord], which: str) -> list[int]:
    if not records:
        raise EmptyRecordsError("no records")
    bits = []
    for record in records:
        value = _bit(record, which)
        if value is None:
            raise ValueError(
                f"record {record.example_id} is missing the {which} correctness bit"
            )
        bits.append(value)
    return bits


def compute_ex(records: list[PerExampleRecord], which: str = "module") -> Fraction:
    """Execution accuracy of one arm, as an exact percent."""
    bits = _require_bits(records, which)
    return Fraction(100 * sum(bits), len(bits))


def disagreement(records: list[PerExampleRecord]) -> tuple[Fraction, Fraction]:
    """(pipeline-only percent, baseline-only percent): the proportions of
    examples where exactly one arm is correct."""
    baseline = _require_bits(records, "baseline")
    module = _require_bits(records, "module")
    n = len(records)
    module_only = sum(1 for b, m in zip(baseline, module) if m == 1 and b == 0)
    baseline_only = sum(1 for b, m in zip(baseline, module) if b == 1 and m == 0)
    return Fraction(100 * module_only, n), Fraction(100 * baseline_only, n)


def oracle_ex(records: list[PerExampleRecord]) -> Fraction:
    """EX of a perfect router: it picks a correct arm whenever one exists."""
    baseline = _require_bits(records, "baseline")
    module = _require_bits(records, "module")
    return Fraction(100 * sum(max(b, m) for b, m in zip(baseline, module)), len(records))


def router_sweep(
    records: list[PerExampleRecord], accuracies: list[float]
) -> list[tuple[float, Fraction]]:
    """Expected EX as a function of router accuracy a.

    With probability a the router picks the better arm, otherwise the worse
    one; on agreement examples the choice is irrelevant. Affine and
    non-decreasing in a, with EX(1) equal to the oracle EX.
    """
    baseline = _require_bits(records, "baseline")
    module = _require_bits(records, "module")
    n = len(records)
    best = sum(max(b, m) for b, m in zip(baseline, module))
    worst = sum(min(b, m) for b, m in zip(baseline, module))
    points = []
    for accuracy in accuracies:
        if not 0.0 <= accuracy <= 1.0:
            raise ValueError(f"router accuracy {accuracy} outside [0, 1]")
        a = Fraction(accuracy)
        expected = 100 * (a * best + (1 - a) * worst) / n
        points.append((accuracy, expected))
    return points


def pearson(x: list[float], y: list[float]) -> float:
    """Sample Pearson correlation coefficient."""
    if len(x) != len(y):
        raise ValueError("vectors must have equal length")
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 points")
    mean_x = math.fsum(x) / n
    mean_y = math.fsum(y) / n
    dx = [value - mean_x for value in x]
    dy = [value - mean_y for value in y]
    var_x = math.fsum(d * d for d in dx)
    var_y = math.fsum(d * d for d in dy)
    if var_x == 0.0 or var_y == 0.0:
        raise UndefinedCorrelationError("zero variance input")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(var_x * var_y)
    return max(-1.0, min(1.0, r))


def average_ranks(values: list[float]) -> list[float]:
    """1-based ranks; ties receive the mean of their rank range."""
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def spearman(x: list[float], y: list[float]) -> float:
    """Spearman rank correlation: Pearson over average-ranked values."""
    return pearson(average_ranks(list(x)), average_ranks(list(y)))


def complexity_correlation(records: list[PerExampleRecord]) -> tuple[float, float]:
    """Correlate schema size with the pipeline's per-group EX advantage.

    Records are grouped by table_count; each group's delta is the pipeline
    EX minus the baseline EX, in percent.
    """
    baseline = _require_bits(records, "baseline")
    module = _require_bits(records, "module")
    groups: dict[int, list[int]] = {}
    for index, record in enumerate(records):
        groups.setdefault(record.table_count, []).append(index)
    if len(groups) < 2:
        raise UndefinedCorrelationError("need records spanning >= 2 table counts")
    table_counts = []
    deltas = []
    for count in sorted(groups):
        indices = groups[count]
        size = len(indices)
        module_pct = 100.0 * sum(module[i] for i in indices) / size
        baseline_pct = 100.0 * sum(baseline[i] for i in indices) / size
        table_counts.append(float(count))
        deltas.append(module_pct - baseline_pct)
    return pearson(table_counts, deltas), spearman(table_counts, deltas)


def routed_ex(records: list[PerExampleRecord]) -> Fraction:
    """EX achieved by the routed arm: each record scored on its chosen branch."""
    if not records:
        raise EmptyRecordsError("no records")
    total = 0
    for record in records:
        if record.route_taken == BRANCH_DIVIDE_AND_MERGE:
            bit = record.module_correct
        elif record.route_taken == BRANCH_BASELINE:
            bit = record.baseline_correct
        else:
            raise ValueError(f"record {record.example_id} has no route_taken")
        if bit is None:
            raise ValueError(f"record {record.example_id} routed arm was not scored")
        total += bit
    return Fraction(100 * total, len(records))


def realized_router_accuracy(
    routed_records: list[PerExampleRecord],
    reference_records: list[PerExampleRecord],
) -> float:
    """Accuracy of routed decisions against disagreement-oracle labels.

    reference_records must carry both correctness bits (a ``both`` run over
    the same examples); only disagreement examples are scored.
    """
    reference = {r.example_id: r for r in reference_records}
    scored = []
    for record in routed_records:
        if not record.route_taken:
            continue
        ref = reference.get(record.example_id)
        if ref is None or ref.baseline_correct is None or ref.module_correct is None:
            continue
        if ref.module_correct == 1 and ref.baseline_correct == 0:
            oracle = BRANCH_DIVIDE_AND_MERGE
        elif ref.baseline_correct == 1 and ref.module_correct == 0:
            oracle = BRANCH_BASELINE
        else:
            continue
        scored.append(record.route_taken == oracle)
    if not scored:
        raise UndefinedAccuracyError("no disagreement examples to score against")
    return sum(scored) / len(scored)


def build_report(
    records: list[PerExampleRecord],
    sweep_points: tuple[float, ...] = DEFAULT_SWEEP_POINTS,
) -> EvalReport:
    """Compute every report quantity the record set supports."""
    if not records:
        raise EmptyRecordsError("no records")
    report = EvalReport(n=len(records))

    has_baseline = all(r.baseline_correct is not None for r in records)
    has_module = all(r.module_correct is not None for r in records)
    if has_baseline:
        report.ex_baseline = compute_ex(records, "baseline")
    if has_module:
        report.ex_module = compute_ex(records, "module")
    if has_baseline and has_module:
        report.module_only, report.baseline_only = disagreement(records)
        report.ex_oracle = oracle_ex(records)
        report.sweep = router_sweep(records, list(sweep_points))
        try:
            report.pearson_r, report.spearman_rho = complexity_correlation(records)
        except UndefinedCorrelationError:
            pass
    if all(r.route_taken for r in records):
        report.ex_routed = routed_ex(records)
    return report


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def _pct(value: Fraction | float | None) -> float | None:
    if value is None:
        return None
    return round(float(value), 2)


def report_to_dict(report: EvalReport) -> dict:
    return {
        "n": report.n,
        "ex_baseline": _pct(report.ex_baseline),
        "ex_module": _pct(report.ex_module),
        "module_only": _pct(report.module_only),
        "baseline_only": _pct(report.baseline_only),
        "ex_oracle": _pct(report.ex_oracle),
        "ex_routed": _pct(report.ex_routed),
        "sweep": [[a, _pct(value)] for a, value in report.sweep],
        "pearson_r": None if report.pearson_r is None else round(report.pearson_r, 4),
        "spearman_rho": None
        if report.spearman_rho is None
        else round(report.spearman_rho, 4),
        "ablation": [
            {
                "merge_strategy": label,
                "ex_without_cs": _pct(without),
                "ex_with_cs": _pct(with_cs),
            }
            for label, without, with_cs in report.ablation_rows
        ],
        "realized_router_accuracy": None
        if report.realized_router_accuracy is None
        else round(report.realized_router_accuracy, 4),
    }


def report_to_markdown(report: EvalReport) -> str:
    lines = ["# Benchmark report", "", f"Examples: {report.n}", ""]

    arm_rows = []
    if report.ex_baseline is not None:
        arm_rows.append(("Baseline", report.ex_baseline))
    if report.ex_module is not None:
        arm_rows.append(("Divide-and-merge", report.ex_module))
    if report.ex_routed is not None:
        arm_rows.append(("Routed", report.ex_routed))
    if report.ex_oracle is not None:
        arm_rows.append(("Oracle routing", report.ex_oracle))
    if arm_rows:
        lines += ["## Execution accuracy", "", "| Arm | EX (%) |", "|---|---|"]
        lines += [f"| {name} | {_pct(value):.2f} |" for name, value in arm_rows]
        lines.append("")

    if report.ablation_rows:
        lines += [
            "## Column selection and merge strategy",
            "",
            "| Merge strategy | EX w/o CS (%) | EX with CS (%) |",
            "|---|---|---|",
        ]
        lines += [
            f"| {label} | {_pct(without):.2f} | {_pct(with_cs):.2f} |"
            for label, without, with_cs in report.ablation_rows
        ]
        lines.append("")

    if report.module_only is not None and report.baseline_only is not None:
        lines += [
            "## Disagreement",
            "",
            "| Pipeline only (%) | Baseline only (%) |",
            "|---|---|",
            f"| {_pct(report.module_only):.2f} | {_pct(report.baseline_only):.2f} |",
            "",
        ]

    if report.sweep:
        lines += [
            "## Router-accuracy sweep",
            "",
            "| Router accuracy | Expected EX (%) |",
            "|---|---|",
        ]
        lines += [f"| {a:.2f} | {_pct(value):.2f} |" for a, value in report.sweep]
        lines.append("")

    if report.realized_router_accuracy is not None:
        lines.append(
            f"Realized router accuracy: {report.realized_router_accuracy:.4f}"
        )
        lines.append("")

    if report.pearson_r is not None and report.spearman_rho is not None:
        lines += [
            "## Schema-complexity correlation",
            "",
            f"Pearson r = {report.pearson_r:.2f}, Spearman rho = {report.spearman_rho:.2f}",
            "",
        ]
    return "\n".join(lines)


def emit_report(report: EvalReport, fmt: str, path: str | Path) -> Path:
    """Write the report as machine-stable JSON or paper-style markdown."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        payload = json.dumps(report_to_dict(report), indent=2, sort_keys=True)
        path.write_text(payload + "\n", encoding="utf-8")
    elif fmt == "markdown":
        path.write_text(report_to_markdown(report), encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


# ---------------------------------------------------------------------------
# Benchmark runner
# ---------------------------------------------------------------------------


def record_to_dict(record: PerExampleRecord) -> dict:
    return {
        "example_id": record.example_id,
        "db_id": record.db_id,
        "table_count": record.table_count,
        "baseline_correct": record.baseline_correct,
        "module_correct": record.module_correct,
        "route_taken": record.route_taken,
        "final_sql_baseline": record.final_sql_baseline,
        "final_sql_module": record.final_sql_module,
        "trace_paths": list(record.trace_paths),
        "error": record.error,
    }


def record_from_dict(data: dict) -> PerExampleRecord:
    return PerExampleRecord(
        example_id=data["example_id"],
        db_id=data["db_id"],
        table_count=data["table_count"],
        baseline_correct=data.get("baseline_correct"),
        module_correct=data.get("module_correct"),
        route_taken=data.get("route_taken", ""),
        final_sql_baseline=data.get("final_sql_baseline", ""),
        final_sql_module=data.get("final_sql_module", ""),
        trace_paths=tuple(data.get("trace_paths", ("", ""))),
        error=data.get("error", ""),
    )


def write_records(path: str | Path, records: list[PerExampleRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps([record_to_dict(r) for r in records], indent=2, sort_keys=True)
    path.write_text(payload + "\n", encoding="utf-8")


def load_records(path: str | Path) -> list[PerExampleRecord]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [record_from_dict(row) for row in data]


def _cache_key(
    example_id: str,
    arm: str,
    config: RunConfig,
    model_ids: str,
    prompts_digest: str,
) -> str:
    payload = json.dumps(
        {
            "example_id": example_id,
            "arm": arm,
            "merge_strategy": config.pipeline.merge_strategy,
            "column_selection": config.pipeline.column_selection_enabled,
            "model_ids": model_ids,
            "prompts": prompts_digest,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_name = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(temp_name, path)
    except BaseException:
        try:
            os.unlink(temp_name)
        except OSError:
            pass
        raise


def _score(
    example: BenchmarkExample,
    trace: PipelineTrace,
    db_path: str,
    config: RunConfig,
) -> tuple[int, str]:
    """(correctness bit, error note) for one arm's trace."""
    if trace.error:
        return 0, trace.error
    outcome = execution_accuracy(
        example,
        trace.final_sql,
        db_path,
        timeout_ms=config.timeout_ms,
        float_tolerance=config.float_tolerance,
    )
    return int(outcome.verdict.equal), ""


def run_benchmark(
    config: RunConfig,
    arm: str,
    *,
    endpoints_for=None,
) -> list[PerExampleRecord]:
    """Run a benchmark over the configured dataset.

    ``endpoints_for(example_id, example) -> ModelPair`` supplies the model
    endpoints per example; by default the configured HTTP endpoints are
    shared across examples. Results are cached per example under a key
    covering the arm, pipeline flags, model ids, and prompt digests; cache
    hits skip all model calls.
    """
    if arm not in ARMS:
        raise ValueError(f"unknown arm {arm!r}")

    schemas = load_schemas(config.tables_file)
    examples = load_examples(config.examples_file)
    if config.limit is not None:
        examples = examples[: config.limit]

    templates = load_templates(config.prompts_dir)
    fewshot = load_fewshot(config.fewshot_file)
    prompts_hash = prompt_digest(templates, fewshot)

    router_model = None
    if arm == ARM_ROUTED and config.router_kind == KIND_LOGISTIC:
        if config.router_model_file is None:
            raise ValueError("logistic routing requires router.model_file")
        router_model = load_router_model(config.router_model_file)

    if endpoints_for is None:
        if config.reasoning is None or config.coding is None:
            raise ValueError("config must define reasoning_model and coding_model")
        shared = ModelPair(
            reasoning=config.reasoning.build(), coding=config.coding.build()
        )

        def endpoints_for(example_id, example):
            return shared

    run_dir = Path(config.run_dir)
    traces_dir = run_dir / "traces"
    transcripts_dir = run_dir / "transcripts"

    def process(item: tuple[int, BenchmarkExample]) -> PerExampleRecord:
        index, example = item
        example_id = f"ex{index:04d}"
        schema = schemas.get(example.db_id)
        if schema is None:
            return PerExampleRecord(
                example_id=example_id,
                db_id=example.db_id,
                table_count=0,
                baseline_correct=0 if arm in (ARM_BASELINE, ARM_BOTH) else None,
                module_correct=0 if arm in (ARM_MODULE, ARM_BOTH) else None,
                error=f"unknown db_id {example.db_id!r}",
            )

        pair = endpoints_for(example_id, example)
        model_ids = f"{pair.reasoning.model_id}|{pair.coding.model_id}"
        key = _cache_key(example_id, arm, config, model_ids, prompts_hash)
        if config.cache_dir is not None:
            cached = Path(config.cache_dir) / f"{key}.json"
            if cached.is_file():
                return record_from_dict(json.loads(cached.read_text(encoding="utf-8")))

        try:
            record = _run_example(
                example_id, example, schema, arm, config, pair, templates,
                fewshot, router_model, traces_dir, transcripts_dir,
            )
        except (DatasetIntegrityError, DatabaseOpenError, ValueError) as exc:
            record = PerExampleRecord(
                example_id=example_id,
                db_id=example.db_id,
                table_count=schema.table_count,
                baseline_correct=0 if arm in (ARM_BASELINE, ARM_BOTH) else None,
                module_correct=0 if arm in (ARM_MODULE, ARM_BOTH) else None,
                error=str(exc),
            )

        if config.cache_dir is not None:
            _atomic_write(
                Path(config.cache_dir) / f"{key}.json",
                json.dumps(record_to_dict(record), sort_keys=True),
            )
        return record

    if config.worker_count == 1:
        records = [process(item) for item in enumerate(examples)]
    else:
        with ThreadPoolExecutor(max_workers=config.worker_count) as pool:
            records = list(pool.map(process, enumerate(examples)))

    records.sort(key=lambda record: record.example_id)
    write_records(run_dir / "records.json", records)
    return records


def _decide_route(example, schema, config, pair, templates, router_model, transcript):
    if config.router_kind == KIND_HEURISTIC:
        features = extract_features(example.question, schema)
        return route_heuristic(features, config.table_threshold)
    if config.router_kind == KIND_LOGISTIC:
        features = extract_features(example.question, schema)
        return route_logistic(router_model, features)
    if config.router_kind == KIND_JUDGE:
        return route_judge(
            example.question,
            schema,
            pair.reasoning,
            templates=templates,
            transcript=transcript,
        )
    raise ValueError(f"unknown router kind {config.router_kind!r}")


def _run_example(
    example_id: str,
    example: BenchmarkExample,
    schema: DatabaseSchema,
    arm: str,
    config: RunConfig,
    pair: ModelPair,
    templates,
    fewshot,
    router_model,
    traces_dir: Path,
    transcripts_dir: Path,
) -> PerExampleRecord:
    db_path = schema.db_file_path
    record = PerExampleRecord(
        example_id=example_id, db_id=example.db_id, table_count=schema.table_count
    )

    run_arms = {ARM_BASELINE: ("baseline",), ARM_MODULE: ("module",)}.get(
        arm, ("baseline", "module")
    )
    if arm == ARM_ROUTED:
        router_transcript = []
        decision = _decide_route(
            example, schema, config, pair, templates, router_model, router_transcript
        )
        record.route_taken = decision.branch
        if router_transcript:
            write_transcript(
                transcripts_dir / f"{example_id}_router.jsonl", router_transcript
            )
        run_arms = (
            ("module",) if decision.branch == BRANCH_DIVIDE_AND_MERGE else ("baseline",)
        )

    notes = []
    trace_paths = ["", ""]
    if "baseline" in run_arms:
        trace = run_baseline(
            example,
            schema,
            pair.coding,
            fewshot,
            db_path,
            config.pipeline.max_refinements,
            example_id=example_id,
            templates=templates,
            timeout_ms=config.timeout_ms,
        )
        bit, note = _score(example, trace, db_path, config)
        record.baseline_correct = bit
        record.final_sql_baseline = trace.final_sql
        if note:
            notes.append(f"baseline: {note}")
        if config.save_traces:
            path = traces_dir / f"{example_id}_baseline.json"
            write_trace(path, trace)
            write_transcript(
                transcripts_dir / f"{example_id}_baseline.jsonl", trace.transcript
            )
            trace_paths[0] = str(path)

    if "module" in run_arms:
        trace = run_divide_and_merge(
            example,
            schema,
            config.pipeline,
            pair,
            db_path,
            example_id=example_id,
            templates=templates,
            fewshot=fewshot,
            timeout_ms=config.timeout_ms,
        )
        bit, note = _score(example, trace, db_path, config)
        record.module_correct = bit
        record.final_sql_module = trace.final_sql
        if note:
            notes.append(f"module: {note}")
        if config.save_traces:
            path = traces_dir / f"{example_id}_module.json"
            write_trace(path, trace)
            write_transcript(
                transcripts_dir / f"{example_id}_module.jsonl", trace.transcript
            )
            trace_paths[1] = str(path)

    record.trace_paths = (trace_paths[0], trace_paths[1])
    record.error = "; ".join(notes)
    return record
