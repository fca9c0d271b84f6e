"""Command-line surface: decompose, schedule, search, train, bench.

Exit codes: 0 success, 1 input or parse error, 2 empty result, 3 backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path

from . import adapter as adapter_mod
from . import bench as bench_mod
from . import search as search_mod
from .backend import BackendPool, ChatRequest, build_pool_from_files
from .core import ModelTier
from .decompose import decompose, exemplars_for, load_exemplars
from .errors import (
    BenchmarkFormatError,
    CapabilityError,
    ConfigError,
    DecodeError,
    DecompositionParseError,
    EmptyDatasetError,
    TandemError,
    TransportError,
)
from .execute import run_on_graph
from .schedule import (
    DEPENDENCY_SYSTEM_PROMPT,
    build_dependency_prompt,
    build_graph,
    parse_dependencies,
    to_dot,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_EMPTY = 2
EXIT_BACKEND = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backends", required=True, help="per-tier backend profiles JSON file")
    parser.add_argument(
        "--mock-script",
        action="append",
        default=[],
        metavar="TIER=PATH",
        help="mock script file for a tier whose profile endpoint is 'mock' (repeatable)",
    )
    parser.add_argument("--seed", type=int, default=0, help="seed for all randomized choices")
    parser.add_argument("--workers", type=int, default=4, help="concurrent task workers")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--embed-dim", type=int, default=64, help="mock embedding dimension")


def _pool_from_args(args: argparse.Namespace) -> BackendPool:
    scripts = {}
    for spec in args.mock_script:
        tier_name, _, path = spec.partition("=")
        if not path:
            raise ConfigError(f"--mock-script expects TIER=PATH, got {spec!r}")
        scripts[tier_name] = path
    return build_pool_from_files(
        args.backends, scripts, mock_seed=args.seed, embed_dim=args.embed_dim
    )


def _tier(name: str) -> ModelTier:
    return ModelTier(name)


def _load_inputs(args: argparse.Namespace):
    tasks = bench_mod.load_benchmark(args.tasks)
    exemplars = load_exemplars(args.exemplars)
    pool = _pool_from_args(args)
    return tasks, exemplars, pool


def _schedule_one(task, subtasks, pool, tier, max_tokens=512):
    request = ChatRequest(
        system=DEPENDENCY_SYSTEM_PROMPT,
        user=build_dependency_prompt(task, subtasks),
        max_tokens=max_tokens,
    )
    response = pool.complete(tier, request)
    deps = parse_dependencies(response.text, subtasks)
    return build_graph(subtasks, deps)


def cmd_decompose(args: argparse.Namespace) -> int:
    tasks, exemplars, pool = _load_inputs(args)
    tier = _tier(args.tier)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump: dict[str, list[dict]] = {}
    for task in tasks:
        subtasks, _ = decompose(task, exemplars_for(exemplars, task.category), tier, pool)
        print(f"{task.id}:")
        for st in subtasks:
            print(f"  {st.index}. {st.description}")
        dump[task.id] = [{"index": st.index, "description": st.description} for st in subtasks]
        if args.dump_graph:
            graph = _schedule_one(task, subtasks, pool, tier)
            (out / f"{task.id}.dot").write_text(to_dot(graph, subtasks), encoding="utf-8")
    (out / "subtasks.json").write_text(
        json.dumps(dump, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return EXIT_OK


def cmd_schedule(args: argparse.Namespace) -> int:
    tasks, exemplars, pool = _load_inputs(args)
    tier = _tier(args.tier)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for task in tasks:
        subtasks, _ = decompose(task, exemplars_for(exemplars, task.category), tier, pool)
        graph = _schedule_one(task, subtasks, pool, tier)
        batches = " | ".join(",".join(map(str, batch)) for batch in graph.batches)
        print(f"{task.id}: batches [{batches}]")
        if args.dump_graph:
            (out / f"{task.id}.dot").write_text(to_dot(graph, subtasks), encoding="utf-8")
    return EXIT_OK


def cmd_search(args: argparse.Namespace) -> int:
    tasks, exemplars, pool = _load_inputs(args)
    tier = _tier(args.tier)
    rng = random.Random(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    outcomes: list[search_mod.SearchOutcome] = []
    subtasks_by_task: dict[str, list] = {}
    for task in tasks:
        subtasks, _ = decompose(task, exemplars_for(exemplars, task.category), tier, pool)
        graph = _schedule_one(task, subtasks, pool, tier)
        subtasks_by_task[task.id] = subtasks
        if args.searcher == "guided":
            outcome = search_mod.quantile_guided_search(
                task, subtasks, graph, pool, n=args.n, theta=args.theta, alpha=args.alpha
            )
        elif args.searcher == "binary":
            outcome = search_mod.binary_search_baseline(
                task, subtasks, graph, pool, attempts=args.attempts, rng=rng
            )
        else:
            outcome = search_mod.zero_shot_search(task, subtasks, graph, pool)
        outcomes.append(outcome)

    search_mod.write_audit_log(outcomes, out / "search_log.jsonl")
    try:
        records = search_mod.emit_adapter_dataset(outcomes, subtasks_by_task)
    except EmptyDatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    search_mod.write_dataset_jsonl(records, out / "dataset.jsonl")

    total_subtasks = sum(len(v) for v in subtasks_by_task.values())
    device_assigned = sum(
        o.final_scheme.count(ModelTier.DEVICE) for o in outcomes
    )
    slm_ratio = device_assigned / total_subtasks if total_subtasks else 0.0
    success = sum(1 for o in outcomes if o.final_correct) / len(outcomes)
    mean_evals = sum(o.evaluations for o in outcomes) / len(outcomes)
    cents = sum(o.spent.api_cents for o in outcomes)
    print("searcher,slm_ratio,success_rate,mean_evaluations,api_cents")
    print(f"{args.searcher},{slm_ratio:.4f},{success:.4f},{mean_evals:.4f},{cents:.2f}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    records = search_mod.load_dataset_jsonl(args.dataset)
    if not records:
        print("error: dataset is empty", file=sys.stderr)
        return EXIT_EMPTY
    pool = _pool_from_args(args)
    embed_tier = _tier(args.tier)
    embedded = [
        search_mod.AdapterRecord(
            task_id=r.task_id,
            subtask_index=r.subtask_index,
            subtask_text=r.subtask_text,
            label=r.label,
            embedding=pool.embed_sentence(embed_tier, r.subtask_text),
        )
        for r in records
    ]
    input_dim = embedded[0].embedding.dim
    mlp = adapter_mod.MlpConfig(
        input_dim=input_dim, hidden_dims=tuple(args.hidden), seed=args.seed
    )
    tc = adapter_mod.TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed
    )

    # Seeded 80/20 split for a held-out sanity number.
    order = list(range(len(embedded)))
    random.Random(args.seed).shuffle(order)
    cut = max(1, int(len(order) * 0.8)) if len(order) > 1 else 1
    train_records = [embedded[i] for i in order[:cut]]
    held_out = [embedded[i] for i in order[cut:]]

    weights, history = adapter_mod.train(train_records, mlp, tc)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    adapter_mod.save_weights(weights, out / "weights.json")
    curve = "\n".join(f"{i},{loss!r}" for i, loss in enumerate(history))
    (out / "loss_curve.csv").write_text("epoch,loss\n" + curve + "\n", encoding="utf-8")

    train_acc = adapter_mod.training_accuracy(weights, train_records)
    print(f"training accuracy: {train_acc:.4f} over {len(train_records)} records")
    if held_out:
        held_acc = adapter_mod.training_accuracy(weights, held_out)
        print(f"held-out accuracy: {held_acc:.4f} over {len(held_out)} records")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    tasks, exemplars, pool = _load_inputs(args)
    options = bench_mod.SuiteOptions(workers=args.workers)
    out = Path(args.out)

    if args.tradeoff:
        fractions = [float(f) for f in args.fractions.split(",")]
        points = bench_mod.tradeoff_sweep(
            tasks, fractions, pool, exemplars, alpha=args.alpha, options=options
        )
        bench_mod.emit_tradeoff(points, out)
        for p in points:
            print(
                f"cloud_fraction={p.cloud_fraction:.2f} accuracy={p.metrics.accuracy:.4f} "
                f"cents={p.metrics.mean_api_cents:.2f}"
            )
        return EXIT_OK

    strategy = bench_mod.Strategy(
        kind=bench_mod.StrategyKind(args.strategy), theta=args.theta, alpha=args.alpha
    )
    weights = None
    if strategy.kind is bench_mod.StrategyKind.ADAPTER:
        if not args.weights:
            raise ConfigError("--strategy adapter requires --weights")
        weights = adapter_mod.load_weights(args.weights)
    metrics, traces = bench_mod.run_suite(
        tasks, strategy, pool, exemplars, adapter_weights=weights, options=options
    )
    bench_mod.emit_report(metrics, strategy.label, out, task_count=len(tasks))
    bench_mod.write_traces(traces, out)
    print(
        f"strategy={strategy.label} accuracy={metrics.accuracy:.4f} "
        f"wall={metrics.mean_wall_seconds:.1f}s cents={metrics.mean_api_cents:.2f}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tandem",
        description="Hybrid device/cloud reasoning pipeline and benchmark harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_dec = sub.add_parser("decompose", help="decompose tasks into sub-task listings")
    _add_common(p_dec)
    p_dec.add_argument("--tasks", required=True, help="benchmark JSONL file")
    p_dec.add_argument("--exemplars", required=True, help="decomposition exemplars JSON file")
    p_dec.add_argument("--tier", choices=["device", "cloud"], default="device")
    p_dec.add_argument("--dump-graph", action="store_true", help="also emit DOT dependency graphs")
    p_dec.set_defaults(func=cmd_decompose)

    p_sch = sub.add_parser("schedule", help="decompose and build dependency batches")
    _add_common(p_sch)
    p_sch.add_argument("--tasks", required=True)
    p_sch.add_argument("--exemplars", required=True)
    p_sch.add_argument("--tier", choices=["device", "cloud"], default="device")
    p_sch.add_argument("--dump-graph", action="store_true")
    p_sch.set_defaults(func=cmd_schedule)

    p_sea = sub.add_parser("search", help="search allocation schemes and emit the adapter dataset")
    _add_common(p_sea)
    p_sea.add_argument("--tasks", required=True)
    p_sea.add_argument("--exemplars", required=True)
    p_sea.add_argument("--tier", choices=["device", "cloud"], default="device")
    p_sea.add_argument("--searcher", choices=["guided", "binary", "zeroshot"], default="guided")
    p_sea.add_argument("--n", type=int, default=1, help="sub-tasks moved per search step")
    p_sea.add_argument("--theta", type=float, default=None, help="initial split threshold")
    p_sea.add_argument("--alpha", type=float, default=0.8, help="quantile level")
    p_sea.add_argument("--attempts", type=int, default=5, help="binary-search retries per halving")
    p_sea.set_defaults(func=cmd_search)

    p_tr = sub.add_parser("train", help="train the allocation adapter on a labeled dataset")
    _add_common(p_tr)
    p_tr.add_argument("--dataset", required=True, help="labeled sub-task JSONL file")
    p_tr.add_argument("--tier", choices=["device", "cloud"], default="device")
    p_tr.add_argument("--hidden", type=int, nargs="*", default=[128])
    p_tr.add_argument("--lr", type=float, default=1e-3)
    p_tr.add_argument("--epochs", type=int, default=200)
    p_tr.add_argument("--batch-size", type=int, default=32)
    p_tr.set_defaults(func=cmd_train)

    p_ben = sub.add_parser("bench", help="run a strategy over a benchmark and emit reports")
    _add_common(p_ben)
    p_ben.add_argument("--tasks", required=True)
    p_ben.add_argument("--exemplars", required=True)
    p_ben.add_argument(
        "--strategy",
        choices=[k.value for k in bench_mod.StrategyKind],
        default="threshold",
    )
    p_ben.add_argument("--weights", default=None, help="adapter weights file")
    p_ben.add_argument("--theta", type=float, default=None)
    p_ben.add_argument("--alpha", type=float, default=0.8)
    p_ben.add_argument("--tradeoff", action="store_true", help="sweep cloud fractions instead")
    p_ben.add_argument("--fractions", default="0,0.25,0.5,0.75,1.0")
    p_ben.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DecompositionParseError as exc:
        print(f"error: task {exc.task_id}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BenchmarkFormatError, ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EmptyDatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (TransportError, DecodeError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except TandemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
