from __future__ import annotations

import json
import math
import random
from fractions import Fraction

import pytest

from helpers import scripted_pair
from splitsql.harness import (
    ARM_BASELINE,
    ARM_BOTH,
    ARM_MODULE,
    ARM_ROUTED,
    EmptyRecordsError,
    EvalReport,
    PerExampleRecord,
    RunConfig,
    UndefinedCorrelationError,
    average_ranks,
    build_report,
    complexity_correlation,
    compute_ex,
    disagreement,
    emit_report,
    load_config,
    load_records,
    oracle_ex,
    pearson,
    realized_router_accuracy,
    report_to_dict,
    router_sweep,
    routed_ex,
    run_benchmark,
    spearman,
    write_records,
)
from splitsql.pipeline import MERGE_LAST_SUBQUERY, PipelineConfig
from splitsql.router import BRANCH_BASELINE, BRANCH_DIVIDE_AND_MERGE


def records_from_bits(
    baseline_bits, module_bits, table_counts=None
) -> list[PerExampleRecord]:
    n = len(baseline_bits)
    table_counts = table_counts or [3] * n
    return [
        PerExampleRecord(
            example_id=f"ex{i:04d}",
            db_id="db",
            table_count=table_counts[i],
            baseline_correct=baseline_bits[i],
            module_correct=module_bits[i],
        )
        for i in range(n)
    ]


def records_from_counts(both, module_only, baseline_only, neither):
    baseline = [1] * both + [0] * module_only + [1] * baseline_only + [0] * neither
    module = [1] * both + [1] * module_only + [0] * baseline_only + [0] * neither
    return records_from_bits(baseline, module)


def _random_records(rng, max_n=500):
    n = rng.randint(1, max_n)
    baseline = [rng.randint(0, 1) for _ in range(n)]
    module = [rng.randint(0, 1) for _ in range(n)]
    counts = [rng.randint(2, 12) for _ in range(n)]
    return records_from_bits(baseline, module, counts)


# ---------------------------------------------------------------------------
# compute_ex / disagreement / oracle
# ---------------------------------------------------------------------------


def test_compute_ex_basic():
    records = records_from_bits([1, 1, 0, 0], [1, 0, 1, 0])
    assert compute_ex(records, "baseline") == Fraction(50)
    assert float(compute_ex(records, "module")) == 50.0
    assert compute_ex(records_from_bits([1, 1], [1, 1]), "module") == Fraction(100)


def test_compute_ex_matches_published_ablation_value():
    # 1517 of 2000 correct is exactly 75.85 percent.
    records = records_from_bits([0] * 2000, [1] * 1517 + [0] * 483)
    assert compute_ex(records, "module") == Fraction(7585, 100)


def test_compute_ex_empty_is_error():
    with pytest.raises(EmptyRecordsError):
        compute_ex([], "module")


def test_compute_ex_missing_bit_is_error():
    records = [PerExampleRecord("ex0000", "db", 3, baseline_correct=1)]
    with pytest.raises(ValueError, match="module"):
        compute_ex(records, "module")


def test_disagreement_basic():
    records = records_from_bits([1, 0, 1], [0, 1, 1])
    module_only, baseline_only = disagreement(records)
    assert round(float(module_only), 2) == 33.33
    assert round(float(baseline_only), 2) == 33.33


def test_disagreement_identical_arms_is_zero():
    records = records_from_bits([1, 0, 1], [1, 0, 1])
    assert disagreement(records) == (Fraction(0), Fraction(0))


def test_disagreement_matches_published_14b_row():
    # 478 pipeline-only and 891 baseline-only out of 10000: (4.78, 8.91).
    records = records_from_counts(7238, 478, 891, 1393)
    module_only, baseline_only = disagreement(records)
    assert module_only == Fraction(478, 100)
    assert baseline_only == Fraction(891, 100)


def test_oracle_complementary_arms():
    assert oracle_ex(records_from_bits([1, 0], [0, 1])) == Fraction(100)
    assert oracle_ex(records_from_bits([1, 0], [1, 0])) == Fraction(50)


def test_oracle_from_published_components():
    # module EX 77.16 and baseline-only 8.91 compose to exactly 86.07.
    records = records_from_counts(7000, 716, 891, 1393)
    assert compute_ex(records, "module") == Fraction(7716, 100)
    assert disagreement(records)[1] == Fraction(891, 100)
    assert oracle_ex(records) == Fraction(8607, 100)


def test_oracle_identity_exact_on_random_sets():
    rng = random.Random(7)
    for _ in range(1000):
        records = _random_records(rng, max_n=60)
        module_only, baseline_only = disagreement(records)
        oracle = oracle_ex(records)
        assert oracle == compute_ex(records, "module") + baseline_only
        assert oracle == compute_ex(records, "baseline") + module_only
        assert oracle >= max(
            compute_ex(records, "module"), compute_ex(records, "baseline")
        )


# ---------------------------------------------------------------------------
# router sweep
# ---------------------------------------------------------------------------


def test_sweep_endpoints_and_midpoint():
    records = records_from_bits([1, 0, 1, 0, 1], [0, 1, 1, 0, 0])
    points = router_sweep(records, [0.0, 0.5, 1.0])
    assert points[2][1] == oracle_ex(records)
    anti = Fraction(
        100 * sum(min(r.baseline_correct, r.module_correct) for r in records),
        len(records),
    )
    assert points[0][1] == anti
    expected_mid = (compute_ex(records, "baseline") + compute_ex(records, "module")) / 2
    assert points[1][1] == expected_mid


def test_sweep_anti_oracle_of_complementary_arms_is_zero():
    records = records_from_bits([1, 0], [0, 1])
    assert router_sweep(records, [0.0])[0][1] == Fraction(0)


def test_sweep_monotone_and_affine_on_random_sets():
    rng = random.Random(11)
    grid = [i / 10 for i in range(11)]
    for _ in range(200):
        records = _random_records(rng, max_n=50)
        curve = [value for _, value in router_sweep(records, grid)]
        assert all(b >= a for a, b in zip(curve, curve[1:]))
        # Affine in a: every point lies exactly on the endpoint chord.
        low, high = curve[0], curve[-1]
        for accuracy, value in zip(grid, curve):
            assert value == low + (high - low) * Fraction(accuracy)


def test_sweep_matches_per_record_brute_force():
    rng = random.Random(13)
    for _ in range(50):
        records = _random_records(rng, max_n=30)
        for accuracy in (0.0, 0.25, 0.5, 0.75, 1.0):
            a = Fraction(accuracy)
            brute = (
                sum(
                    a * max(r.baseline_correct, r.module_correct)
                    + (1 - a) * min(r.baseline_correct, r.module_correct)
                    for r in records
                )
                * 100
                / len(records)
            )
            ((_, value),) = router_sweep(records, [accuracy])
            assert value == brute


def test_sweep_rejects_out_of_range_accuracy():
    with pytest.raises(ValueError):
        router_sweep(records_from_bits([1], [0]), [1.5])


# ---------------------------------------------------------------------------
# correlations
# ---------------------------------------------------------------------------


def reference_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    den = math.sqrt(sum((a - mx) ** 2 for a in x) * sum((b - my) ** 2 for b in y))
    return num / den


def reference_ranks(values):
    # O(n^2) rank-by-counting with average ties.
    ranks = []
    for value in values:
        smaller = sum(1 for other in values if other < value)
        equal = sum(1 for other in values if other == value)
        ranks.append(smaller + (equal + 1) / 2)
    return ranks


def test_pearson_known_values():
    assert pearson([1, 2, 3], [2, 4, 6]) == 1.0
    assert pearson([1, 2, 3], [3, 2, 1]) == -1.0
    assert abs(pearson([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-12


def test_pearson_errors():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [1])
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2, 3])


def test_pearson_self_is_one():
    rng = random.Random(3)
    for _ in range(20):
        x = [rng.uniform(-5, 5) for _ in range(10)]
        assert abs(pearson(x, x) - 1.0) < 1e-12


def test_spearman_monotone_pairs():
    assert spearman([1, 2, 3], [10, 20, 400]) == 1.0
    assert spearman([1, 2, 3], [9, 4, 1]) == -1.0


def test_spearman_tie_expansion():
    expected = pearson([1.5, 1.5, 3], [1, 2, 3])
    assert abs(spearman([1, 1, 2], [1, 2, 3]) - expected) < 1e-15


def test_spearman_invariant_under_monotone_transform():
    rng = random.Random(5)
    x = [rng.uniform(0, 10) for _ in range(25)]
    y = [rng.uniform(0, 10) for _ in range(25)]
    base = spearman(x, y)
    assert abs(spearman([math.exp(v) for v in x], y) - base) < 1e-12
    assert abs(spearman(x, [v**3 for v in y]) - base) < 1e-12


def test_correlations_match_brute_force_references():
    rng = random.Random(17)
    for _ in range(200):
        n = rng.randint(3, 40)
        # Draw from a small value pool so ties are common.
        x = [rng.choice([0.0, 1.0, 1.0, 2.5, 4.0, 7.0]) for _ in range(n)]
        y = [rng.choice([-1.0, 0.0, 0.0, 3.0, 5.0]) for _ in range(n)]
        try:
            ours = pearson(x, y)
        except UndefinedCorrelationError:
            continue
        assert abs(ours - reference_pearson(x, y)) < 1e-12
        assert average_ranks(x) == reference_ranks(x)
        assert abs(
            spearman(x, y) - reference_pearson(reference_ranks(x), reference_ranks(y))
        ) < 1e-12


def test_complexity_correlation_positive_fixture():
    # The pipeline wins on wide schemas and loses on narrow ones.
    records = (
        records_from_bits([1] * 10, [0] * 10, [2] * 10)
        + records_from_bits([0] * 10, [1] * 10, [9] * 10)
        + records_from_bits([1] * 5 + [0] * 5, [1] * 5 + [0] * 5, [5] * 10)
    )
    r, rho = complexity_correlation(records)
    assert r > 0
    assert rho > 0


def test_complexity_correlation_zero_deltas_undefined():
    records = records_from_bits([1, 0, 1, 0], [1, 0, 1, 0], [2, 2, 9, 9])
    with pytest.raises(UndefinedCorrelationError):
        complexity_correlation(records)


def test_complexity_correlation_needs_two_groups():
    records = records_from_bits([1, 0], [0, 1], [4, 4])
    with pytest.raises(UndefinedCorrelationError):
        complexity_correlation(records)


# ---------------------------------------------------------------------------
# report building and emission
# ---------------------------------------------------------------------------


def test_build_report_full_fields():
    records = records_from_bits([1, 0, 1, 1], [0, 1, 1, 0], [2, 9, 2, 9])
    report = build_report(records)
    assert report.n == 4
    assert report.ex_oracle == Fraction(100)
    assert len(report.sweep) == 11
    assert report.pearson_r is not None


def test_emitted_json_is_byte_identical(tmp_path):
    records = records_from_bits([1, 0, 1], [0, 1, 1])
    report = build_report(records)
    first = emit_report(report, "json", tmp_path / "a.json").read_bytes()
    second = emit_report(report, "json", tmp_path / "b.json").read_bytes()
    assert first == second


def test_markdown_contains_published_ablation_row(tmp_path):
    report = EvalReport(n=2147)
    report.ablation_rows = [("Planner&Executor", 66.77, 75.85)]
    markdown = emit_report(report, "markdown", tmp_path / "r.md").read_text()
    assert "Planner&Executor | 66.77 | 75.85" in markdown


def test_markdown_omits_empty_sweep(tmp_path):
    records = records_from_bits([1, 0], [0, 1])
    report = build_report(records, sweep_points=())
    markdown = emit_report(report, "markdown", tmp_path / "r.md").read_text()
    assert "sweep" not in markdown.lower()
    report_full = build_report(records)
    markdown_full = emit_report(report_full, "markdown", tmp_path / "r2.md").read_text()
    assert "sweep" in markdown_full.lower()


def test_report_dict_rounds_to_two_decimals():
    records = records_from_bits([1, 0, 1], [0, 1, 1])
    data = report_to_dict(build_report(records))
    assert data["ex_baseline"] == 66.67
    assert data["ex_module"] == 66.67
    assert data["ex_oracle"] == 100.0


def test_emit_report_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report(EvalReport(n=1), "yaml", tmp_path / "r.yaml")


# ---------------------------------------------------------------------------
# benchmark runner on the scripted mini corpus
# ---------------------------------------------------------------------------

COUNT_CUSTOMERS = "SELECT COUNT(*) FROM Customers"
LIST_FIRST_NAMES = (
    "SELECT customer_first_name FROM Customers ORDER BY customer_first_name"
)


def _scripts_for_first_three():
    """Both-arm scripts for the first three bundled examples.

    Designed outcome: baseline bits (0, 1, 0), pipeline bits (1, 0, 1).
    """
    avg_ordered = (
        "SELECT AVG(p.product_price) FROM Order_Items oi "
        "JOIN Products p ON oi.product_id = p.product_id"
    )
    return {
        "How many customers are there?": [
            ("in one step", "SELECT COUNT(*) FROM Orders"),  # wrong table
            ("table names", "Customers"),
            ("sub-questions", "1. How many customers are there?"),
            ("How many customers", COUNT_CUSTOMERS),
        ],
        "List the first names of all customers in alphabetical order.": [
            ("in one step", LIST_FIRST_NAMES),
            ("table names", "Customers"),
            ("sub-questions", "1. List the first names in alphabetical order."),
            ("first names", LIST_FIRST_NAMES + " DESC"),  # wrong order
        ],
        "What is the price of all products being ordered on average?": [
            ("in one step", "SELECT AVG(product_price) FROM Products"),  # ignores orders
            ("table names", "Order_Items, Products"),
            ("sub-questions", "1. Average the price of ordered products."),
            ("Average the price", avg_ordered),
        ],
    }


@pytest.fixture()
def run_config(corpus_root, tmp_path):
    return RunConfig(
        tables_file=corpus_root / "tables.json",
        examples_file=corpus_root / "examples.json",
        run_dir=tmp_path / "run",
        pipeline=PipelineConfig(
            merge_strategy=MERGE_LAST_SUBQUERY, column_selection_enabled=False
        ),
        worker_count=1,
        cache_dir=None,
        limit=3,
    )


def _scripted_factory(created=None):
    scripts = _scripts_for_first_three()

    def factory(example_id, example):
        pair = scripted_pair(list(scripts[example.question]))
        if created is not None:
            created.append(pair.reasoning.provider.script)
        return pair

    return factory


def test_run_benchmark_both_arms(run_config):
    records = run_benchmark(run_config, ARM_BOTH, endpoints_for=_scripted_factory())
    assert [r.baseline_correct for r in records] == [0, 1, 0]
    assert [r.module_correct for r in records] == [1, 0, 1]
    assert all(r.error == "" for r in records)
    assert records[0].final_sql_module == COUNT_CUSTOMERS
    assert (run_config.run_dir / "records.json").is_file()
    # Traces and transcripts persisted per arm.
    assert (run_config.run_dir / "traces" / "ex0000_module.json").is_file()
    assert (run_config.run_dir / "transcripts" / "ex0000_module.jsonl").is_file()


def test_run_benchmark_single_arm_leaves_other_bit_unset(run_config):
    def baseline_only_factory(example_id, example):
        script = [_scripts_for_first_three()[example.question][0]]
        return scripted_pair(script)

    records = run_benchmark(run_config, ARM_BASELINE, endpoints_for=baseline_only_factory)
    assert [r.baseline_correct for r in records] == [0, 1, 0]
    assert all(r.module_correct is None for r in records)


def test_warm_cache_rerun_is_identical_with_zero_calls(run_config, tmp_path):
    run_config.cache_dir = tmp_path / "cache"
    cold_created = []
    cold = run_benchmark(
        run_config, ARM_BOTH, endpoints_for=_scripted_factory(cold_created)
    )
    assert sum(s.call_count for s in cold_created) > 0

    warm_created = []
    warm = run_benchmark(
        run_config, ARM_BOTH, endpoints_for=_scripted_factory(warm_created)
    )
    assert warm == cold
    assert sum(s.call_count for s in warm_created) == 0
    # Identical records imply an identical report, including the sweep.
    assert report_to_dict(build_report(warm)) == report_to_dict(build_report(cold))


def test_worker_counts_produce_identical_records(run_config):
    serial = run_benchmark(run_config, ARM_BOTH, endpoints_for=_scripted_factory())
    run_config.worker_count = 4
    parallel = run_benchmark(run_config, ARM_BOTH, endpoints_for=_scripted_factory())
    assert serial == parallel


def test_script_exhaustion_marks_record_failed(run_config):
    def empty_factory(example_id, example):
        return scripted_pair([("never matches anything", "x")])

    records = run_benchmark(run_config, ARM_MODULE, endpoints_for=empty_factory)
    assert all(r.module_correct == 0 for r in records)
    assert all("provider error" in r.error for r in records)


def test_routed_arm_heuristic_runs_one_arm(run_config):
    run_config.router_kind = "heuristic"
    run_config.table_threshold = 5  # customer_orders has 8 tables
    records = run_benchmark(run_config, ARM_ROUTED, endpoints_for=_scripted_factory())
    assert all(r.route_taken == BRANCH_DIVIDE_AND_MERGE for r in records)
    assert all(r.baseline_correct is None for r in records)
    assert [r.module_correct for r in records] == [1, 0, 1]
    assert routed_ex(records) == Fraction(200, 3)


def test_routed_arm_judge_uses_one_call(run_config):
    def judge_factory(example_id, example):
        script = [("SIMPLE or COMPLEX", "SIMPLE")]
        script.append(_scripts_for_first_three()[example.question][0])
        return scripted_pair(script)

    run_config.router_kind = "judge"
    records = run_benchmark(run_config, ARM_ROUTED, endpoints_for=judge_factory)
    assert all(r.route_taken == BRANCH_BASELINE for r in records)
    assert [r.baseline_correct for r in records] == [0, 1, 0]
    assert (run_config.run_dir / "transcripts" / "ex0000_router.jsonl").is_file()


def test_records_round_trip(tmp_path):
    records = records_from_bits([1, 0], [0, 1])
    records[0].route_taken = BRANCH_BASELINE
    records[0].trace_paths = ("a.json", "b.json")
    path = tmp_path / "records.json"
    write_records(path, records)
    assert load_records(path) == records


def test_realized_router_accuracy_against_reference():
    reference = records_from_bits([1, 0, 1, 1], [0, 1, 1, 0])
    routed = []
    for record, branch in zip(
        reference,
        [
            BRANCH_BASELINE,  # oracle: baseline  (correct)
            BRANCH_BASELINE,  # oracle: pipeline  (wrong)
            BRANCH_BASELINE,  # agreement         (ignored)
            BRANCH_BASELINE,  # oracle: baseline  (correct)
        ],
    ):
        routed.append(
            PerExampleRecord(
                example_id=record.example_id,
                db_id="db",
                table_count=3,
                baseline_correct=1,
                route_taken=branch,
            )
        )
    assert realized_router_accuracy(routed, reference) == pytest.approx(2 / 3)


def test_realized_router_accuracy_undefined_without_disagreement():
    from splitsql.router import UndefinedAccuracyError

    reference = records_from_bits([1, 1], [1, 1])
    routed = [
        PerExampleRecord(
            example_id=r.example_id,
            db_id="db",
            table_count=3,
            baseline_correct=1,
            route_taken=BRANCH_BASELINE,
        )
        for r in reference
    ]
    with pytest.raises(UndefinedAccuracyError):
        realized_router_accuracy(routed, reference)


def test_load_config_round_trip(tmp_path, corpus_root):
    config_payload = {
        "dataset": {"root": str(corpus_root)},
        "llm": {
            "reasoning_model": {"base_url": "http://localhost:8000/v1", "model_id": "r"},
            "coding_model": {"base_url": "http://localhost:8000/v1", "model_id": "c"},
        },
        "pipeline": {"merge_strategy": "last_subquery", "column_selection": False},
        "executor": {"timeout_ms": 1234},
        "router": {"kind": "heuristic", "table_threshold": 6},
        "harness": {"worker_count": 2, "run_dir": "out"},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config_payload))
    config = load_config(path)
    assert config.tables_file == corpus_root / "tables.json"
    assert config.pipeline.merge_strategy == MERGE_LAST_SUBQUERY
    assert config.pipeline.column_selection_enabled is False
    assert config.timeout_ms == 1234
    assert config.table_threshold == 6
    assert config.worker_count == 2
    assert config.run_dir == tmp_path / "out"
    assert config.reasoning.model_id == "r"
