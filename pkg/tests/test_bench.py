"""Benchmark harness tests: loading, strategies, sweep, reports."""

import json

import pytest

from tandem.bench import (
    Strategy,
    StrategyKind,
    emit_report,
    emit_tradeoff,
    load_benchmark,
    run_suite,
    tradeoff_sweep,
    write_traces,
    SuiteOptions,
)
from tandem.core import Checker, Metrics, ModelTier
from tandem.decompose import DecomposeExemplar
from tandem.errors import BenchmarkFormatError, ConfigError

from fixtures import build_population, population_from_bits

EXEMPLARS = {
    "": [DecomposeExemplar(question="warm-up", steps=("think about the parts", "combine them"))]
}

OPTIONS = SuiteOptions(workers=2)


def mixed_population():
    # Every task has exactly one device-unsolvable sub-task out of four.
    bits = {
        f"T{t:03d}": {i: i != 3 for i in range(1, 5)}
        for t in range(6)
    }
    return population_from_bits(bits)


class TestLoadBenchmark:
    def write(self, tmp_path, lines):
        path = tmp_path / "tasks.jsonl"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def test_three_valid_lines(self, tmp_path):
        lines = [
            json.dumps({"id": f"t{i}", "query": "q", "ground_truth": "1", "checker": "exact"})
            for i in range(3)
        ]
        tasks = load_benchmark(self.write(tmp_path, lines))
        assert [t.id for t in tasks] == ["t0", "t1", "t2"]

    def test_duplicate_id_rejected(self, tmp_path):
        line = json.dumps({"id": "dup", "query": "q", "ground_truth": "1"})
        with pytest.raises(BenchmarkFormatError) as info:
            load_benchmark(self.write(tmp_path, [line, line]))
        assert "dup" in str(info.value)

    def test_missing_checker_defaults_to_exact(self, tmp_path):
        line = json.dumps({"id": "t", "query": "q", "ground_truth": "1"})
        tasks = load_benchmark(self.write(tmp_path, [line]))
        assert tasks[0].checker is Checker.EXACT

    def test_malformed_line_reports_line_number(self, tmp_path):
        good = json.dumps({"id": "t", "query": "q"})
        with pytest.raises(BenchmarkFormatError) as info:
            load_benchmark(self.write(tmp_path, [good, "{not json"]))
        assert ":2:" in str(info.value)

    def test_unknown_checker_rejected(self, tmp_path):
        line = json.dumps({"id": "t", "query": "q", "checker": "regex"})
        with pytest.raises(BenchmarkFormatError):
            load_benchmark(self.write(tmp_path, [line]))


class TestStrategies:
    def test_all_device_on_solvable_population(self):
        population = build_population(num_tasks=5, solvable_rate=1.0, seed=3)
        metrics, traces = run_suite(
            population.tasks,
            Strategy(StrategyKind.ALL_DEVICE),
            population.pool(),
            EXEMPLARS,
            options=OPTIONS,
        )
        assert metrics.accuracy == 1.0
        assert metrics.mean_api_cents == 0.0
        assert metrics.slm_subtask_fraction == 1.0
        assert metrics.slm_time_fraction == 1.0
        assert all(t.correct for t in traces)

    def test_all_cloud_dominates_all_device_on_mixed_population(self):
        population = mixed_population()
        pool = population.pool()
        device_metrics, _ = run_suite(
            population.tasks, Strategy(StrategyKind.ALL_DEVICE), pool, EXEMPLARS, options=OPTIONS
        )
        cloud_metrics, _ = run_suite(
            population.tasks, Strategy(StrategyKind.ALL_CLOUD), pool, EXEMPLARS, options=OPTIONS
        )
        assert cloud_metrics.accuracy >= device_metrics.accuracy
        assert cloud_metrics.mean_api_cents > device_metrics.mean_api_cents
        assert cloud_metrics.slm_subtask_fraction == 0.0

    def test_threshold_routing_beats_both_corners(self):
        population = mixed_population()
        pool = population.pool()
        threshold_metrics, _ = run_suite(
            population.tasks,
            Strategy(StrategyKind.THRESHOLD, theta=0.5),
            pool,
            EXEMPLARS,
            options=OPTIONS,
        )
        device_metrics, _ = run_suite(
            population.tasks, Strategy(StrategyKind.ALL_DEVICE), pool, EXEMPLARS, options=OPTIONS
        )
        cloud_metrics, _ = run_suite(
            population.tasks, Strategy(StrategyKind.ALL_CLOUD), pool, EXEMPLARS, options=OPTIONS
        )
        assert threshold_metrics.accuracy >= device_metrics.accuracy
        assert threshold_metrics.mean_api_cents <= cloud_metrics.mean_api_cents
        assert threshold_metrics.accuracy == cloud_metrics.accuracy

    def test_sequential_matches_threshold_answers_but_not_latency(self):
        population = mixed_population()
        pool = population.pool()
        _, batched = run_suite(
            population.tasks,
            Strategy(StrategyKind.THRESHOLD, theta=0.5),
            pool,
            EXEMPLARS,
            options=OPTIONS,
        )
        _, sequential = run_suite(
            population.tasks,
            Strategy(StrategyKind.SEQUENTIAL, theta=0.5),
            pool,
            EXEMPLARS,
            options=OPTIONS,
        )
        for b, s in zip(batched, sequential):
            assert b.final_answer == s.final_answer
            assert b.correct == s.correct
            assert s.wall_seconds >= b.wall_seconds

    def test_simple_referral_routes_whole_task(self):
        population = mixed_population()
        # Script per-task referral verdicts: half simple, half complex.
        for i, task in enumerate(population.tasks):
            population.cloud_script["rules"].insert(
                0,
                {
                    "match": f"Task: {task.query}",
                    "text": "simple" if i % 2 == 0 else "complex",
                    "token_probs": [0.9],
                    "elapsed_seconds": 0.05,
                },
            )
        metrics, traces = run_suite(
            population.tasks,
            Strategy(StrategyKind.SIMPLE_REFERRAL),
            population.pool(),
            EXEMPLARS,
            options=OPTIONS,
        )
        for trace in traces:
            tiers = {trace.scheme.tier_of(i) for i in trace.scheme.indices()}
            assert len(tiers) == 1  # one tier per task, never split
        assert 0.0 < metrics.slm_subtask_fraction < 1.0

    def test_unscripted_referral_defaults_to_cloud(self):
        population = population_from_bits({"T000": {1: True, 2: True}})
        _, traces = run_suite(
            population.tasks,
            Strategy(StrategyKind.SIMPLE_REFERRAL),
            population.pool(),
            EXEMPLARS,
            options=OPTIONS,
        )
        assert traces[0].scheme.indices_of(ModelTier.CLOUD) == [1, 2]

    def test_adapter_strategy_requires_weights(self):
        population = population_from_bits({"T000": {1: True}})
        with pytest.raises(ConfigError):
            run_suite(
                population.tasks,
                Strategy(StrategyKind.ADAPTER),
                population.pool(),
                EXEMPLARS,
                options=OPTIONS,
            )

    def test_suite_metrics_reproducible(self):
        population = mixed_population()
        pool = population.pool()
        first = run_suite(
            population.tasks, Strategy(StrategyKind.THRESHOLD), pool, EXEMPLARS, options=OPTIONS
        )
        second = run_suite(
            population.tasks, Strategy(StrategyKind.THRESHOLD), pool, EXEMPLARS, options=OPTIONS
        )
        assert first[0] == second[0]
        assert first[1] == second[1]

    def test_failed_decomposition_counts_as_incorrect(self):
        population = population_from_bits({"T000": {1: True}, "T001": {1: True}})
        # Break decomposition for T001 only.
        for script in (population.device_script, population.cloud_script):
            for rule in script["rules"]:
                if rule["match"].startswith("Now the command is Compute marker T001"):
                    rule["text"] = "no numbered lines here"
        metrics, traces = run_suite(
            population.tasks,
            Strategy(StrategyKind.ALL_DEVICE),
            population.pool(),
            EXEMPLARS,
            options=OPTIONS,
        )
        assert metrics.accuracy == 0.5
        failed = [t for t in traces if t.error]
        assert len(failed) == 1 and failed[0].task_id == "T001"


class TestTradeoffSweep:
    def test_endpoints_anchor_to_corner_strategies(self):
        population = mixed_population()
        pool = population.pool()
        points = tradeoff_sweep(
            population.tasks, [0.0, 0.5, 1.0], pool, EXEMPLARS, options=OPTIONS
        )
        device_metrics, _ = run_suite(
            population.tasks, Strategy(StrategyKind.ALL_DEVICE), pool, EXEMPLARS, options=OPTIONS
        )
        cloud_metrics, _ = run_suite(
            population.tasks, Strategy(StrategyKind.ALL_CLOUD), pool, EXEMPLARS, options=OPTIONS
        )
        assert points[0].metrics == device_metrics
        assert points[-1].metrics == cloud_metrics

    def test_cents_monotone_in_cloud_fraction(self):
        population = build_population(num_tasks=6, seed=11)
        points = tradeoff_sweep(
            population.tasks,
            [0.0, 0.25, 0.5, 0.75, 1.0],
            population.pool(),
            EXEMPLARS,
            options=OPTIONS,
        )
        cents = [p.metrics.mean_api_cents for p in points]
        assert all(a <= b + 1e-12 for a, b in zip(cents, cents[1:]))

    def test_unsorted_fractions_rejected(self):
        population = population_from_bits({"T000": {1: True}})
        with pytest.raises(ValueError):
            tradeoff_sweep(population.tasks, [0.5, 0.0], population.pool(), EXEMPLARS)


class TestReports:
    METRICS = Metrics(
        accuracy=0.75,
        mean_wall_seconds=12.3456,
        mean_api_cents=1.23456,
        slm_time_fraction=0.5,
        slm_subtask_fraction=0.625,
    )

    def test_json_is_canonical_and_stable(self, tmp_path):
        first, _ = emit_report(self.METRICS, "threshold", tmp_path / "a", task_count=4)
        second, _ = emit_report(self.METRICS, "threshold", tmp_path / "b", task_count=4)
        assert first.read_bytes() == second.read_bytes()
        payload = json.loads(first.read_text())
        assert payload["metrics"]["mean_api_cents"] == 1.23  # cents rounded at emission

    def test_csv_presentation(self, tmp_path):
        _, csv_path = emit_report(self.METRICS, "threshold", tmp_path, task_count=4)
        header, row = csv_path.read_text().strip().splitlines()
        assert header == "strategy,accuracy,mean_wall_seconds,mean_api_cents,slm_time_fraction,slm_subtask_fraction"
        fields = row.split(",")
        assert fields[0] == "threshold"
        assert fields[2] == "12.3"  # seconds with one decimal
        assert fields[3] == "1.23"  # cents with two decimals

    def test_tradeoff_csv_has_one_row_per_point(self, tmp_path):
        from tandem.bench import TradeoffPoint

        points = [TradeoffPoint(cloud_fraction=f, metrics=self.METRICS) for f in (0, 0.25, 0.5, 0.75, 1.0)]
        path = emit_tradeoff(points, tmp_path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 6  # header plus five points

    def test_trace_files_written_per_task(self, tmp_path):
        population = population_from_bits({"T000": {1: True}, "T001": {1: True}})
        _, traces = run_suite(
            population.tasks,
            Strategy(StrategyKind.ALL_DEVICE),
            population.pool(),
            EXEMPLARS,
            options=OPTIONS,
        )
        directory = write_traces(traces, tmp_path)
        assert sorted(p.name for p in directory.iterdir()) == ["T000.json", "T001.json"]
        payload = json.loads((directory / "T000.json").read_text())
        assert payload["correct"] is True
