"""Shared test fixtures: scripted mock backends and synthetic task populations.

A population scripts, per sub-task, whether the device tier can solve it. The
device answers a solvable sub-task correctly with high token probabilities and
botches an unsolvable one (low probabilities, answer carrying a ``wrong-``
marker). The cloud answers everything. The final aggregation prompt contains
every step answer, so a single ``wrong-`` rule makes the final answer wrong
exactly when any step answer was wrong.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from tandem.backend import BackendPool, BackendProfile, MockBackend
from tandem.core import Checker, ModelTier, SubTask, Task

DEVICE_STEP_SECONDS = 0.2
CLOUD_STEP_SECONDS = 0.1
AUX_SECONDS = 0.05

CLOUD_PROMPT_PRICE = 0.001
CLOUD_COMPLETION_PRICE = 0.002

FINAL_OK = "FINAL-OK"

# Rules consumed by every population, in priority order.
WRONG_RULE = {
    "match": "wrong-",
    "text": "wrong-final",
    "token_probs": [0.5],
    "elapsed_seconds": AUX_SECONDS,
}
FINAL_RULE = {
    "match": "provide the final answer to the original question",
    "text": FINAL_OK,
    "token_probs": [0.9],
    "elapsed_seconds": AUX_SECONDS,
}
DEPENDENCY_RULE = {
    "match": "list the dependencies in the format",
    "text": "No dependencies.",
    "token_probs": [0.9],
    "elapsed_seconds": AUX_SECONDS,
}
DEFAULT_ENTRY = {"text": "unmatched", "token_probs": [0.5], "elapsed_seconds": 0.0}


def subtask_text(task_id: str, index: int) -> str:
    return f"solve {task_id}-S{index}"


def right_answer(task_id: str, index: int) -> str:
    return f"ans-{task_id}-{index}"


def wrong_answer(task_id: str, index: int) -> str:
    return f"wrong-{task_id}-{index}"


def step_matcher(task_id: str, index: int) -> str:
    # Matches only the "solve now" line, never a predecessor context line.
    return f"to solve now is {index}: {subtask_text(task_id, index)}"


def embed_matcher(task_id: str, index: int) -> str:
    return f'This sentence: "{subtask_text(task_id, index)}"'


@dataclass
class Population:
    tasks: list[Task]
    subtasks: dict[str, list[SubTask]]
    solvable: dict[str, dict[int, bool]]
    device_script: dict = field(default_factory=dict)
    cloud_script: dict = field(default_factory=dict)

    def pool(self, *, seed: int = 0, embed_dim: int = 64, max_inflight: int = 8) -> BackendPool:
        return make_pool(
            self.device_script,
            self.cloud_script,
            seed=seed,
            embed_dim=embed_dim,
            max_inflight=max_inflight,
        )


def make_profiles(*, max_inflight: int = 8) -> dict[ModelTier, BackendProfile]:
    return {
        ModelTier.DEVICE: BackendProfile(
            tier=ModelTier.DEVICE,
            endpoint="mock",
            model_name="pocket-slm",
            max_inflight=max_inflight,
        ),
        ModelTier.CLOUD: BackendProfile(
            tier=ModelTier.CLOUD,
            endpoint="mock",
            model_name="sky-llm",
            price_per_prompt_token_cents=CLOUD_PROMPT_PRICE,
            price_per_completion_token_cents=CLOUD_COMPLETION_PRICE,
            max_inflight=max_inflight,
        ),
    }


def make_pool(
    device_script: dict,
    cloud_script: dict,
    *,
    seed: int = 0,
    embed_dim: int = 64,
    max_inflight: int = 8,
) -> BackendPool:
    backends = {
        ModelTier.DEVICE: MockBackend.from_script(device_script, seed=seed, embed_dim=embed_dim),
        ModelTier.CLOUD: MockBackend.from_script(cloud_script, seed=seed, embed_dim=embed_dim),
    }
    return BackendPool(backends, make_profiles(max_inflight=max_inflight))


def population_from_bits(
    bits_by_task: dict[str, dict[int, bool]],
    *,
    seed: int = 7,
    zero_shot_simple_rate: float = 0.2,
) -> Population:
    """Population with explicit per-sub-task device-solvability bits.

    Device token probabilities land in [0.7, 0.99] for solvable sub-tasks and
    [0.05, 0.3] for unsolvable ones, so quantile scores separate cleanly at
    0.5. Zero-shot verdict rules under-rate the device: unsolvable sub-tasks
    are always judged complex, solvable ones only become "simple" at
    ``zero_shot_simple_rate``.
    """
    rng = random.Random(seed)
    tasks: list[Task] = []
    subtasks: dict[str, list[SubTask]] = {}

    shared_prefix = [dict(WRONG_RULE), dict(FINAL_RULE)]
    decompose_rules: list[dict] = []
    verdict_rules: list[dict] = []
    step_rules_device: list[dict] = []
    step_rules_cloud: list[dict] = []
    embed_rules: list[dict] = []

    for task_id, bits in bits_by_task.items():
        query = f"Compute marker {task_id} from its parts"
        tasks.append(
            Task(
                id=task_id,
                query=query,
                category="synthetic",
                ground_truth=FINAL_OK,
                checker=Checker.EXACT,
            )
        )
        subtasks[task_id] = [SubTask(index=i, description=subtask_text(task_id, i)) for i in bits]

        numbered = "\n".join(f"{i}. {subtask_text(task_id, i)}" for i in bits)
        decompose_rules.append(
            {
                "match": f"Now the command is {query}",
                "text": numbered,
                "token_probs": [0.9],
                "elapsed_seconds": AUX_SECONDS,
            }
        )

        for i, can_solve in bits.items():
            if can_solve:
                probs = [round(rng.uniform(0.7, 0.99), 6) for _ in range(3)]
                answer = right_answer(task_id, i)
                difficulty = 0.15
            else:
                probs = [round(rng.uniform(0.05, 0.3), 6) for _ in range(3)]
                answer = wrong_answer(task_id, i)
                difficulty = 0.9
            step_rules_device.append(
                {
                    "match": step_matcher(task_id, i),
                    "text": answer,
                    "token_probs": probs,
                    "elapsed_seconds": DEVICE_STEP_SECONDS,
                }
            )
            step_rules_cloud.append(
                {
                    "match": step_matcher(task_id, i),
                    "text": right_answer(task_id, i),
                    "token_probs": [0.99, 0.98, 0.99],
                    "elapsed_seconds": CLOUD_STEP_SECONDS,
                }
            )
            embed_rules.append(
                {
                    "match": embed_matcher(task_id, i),
                    "text": "embedding-only",
                    "difficulty": difficulty,
                }
            )
            simple = can_solve and rng.random() < zero_shot_simple_rate
            verdict_rules.append(
                {
                    "match": f"to assess is: {subtask_text(task_id, i)}",
                    "text": "simple" if simple else "complex",
                    "token_probs": [0.9],
                    "elapsed_seconds": AUX_SECONDS,
                }
            )

    device_script = {
        "default": dict(DEFAULT_ENTRY),
        "rules": shared_prefix
        + decompose_rules
        + [dict(DEPENDENCY_RULE)]
        + embed_rules
        + step_rules_device,
    }
    cloud_script = {
        "default": dict(DEFAULT_ENTRY),
        "rules": [dict(r) for r in shared_prefix]
        + verdict_rules
        + decompose_rules
        + [dict(DEPENDENCY_RULE)]
        + embed_rules
        + step_rules_cloud,
    }
    return Population(
        tasks=tasks,
        subtasks=subtasks,
        solvable={tid: dict(b) for tid, b in bits_by_task.items()},
        device_script=device_script,
        cloud_script=cloud_script,
    )


def build_population(
    *,
    num_tasks: int,
    seed: int = 7,
    k_range: tuple[int, int] = (3, 8),
    solvable_rate: float = 0.7,
    solvable_counts: list[int] | None = None,
    zero_shot_simple_rate: float = 0.2,
) -> Population:
    """Synthetic random population.

    ``solvable_counts`` pins the number of solvable sub-tasks per task (cycled,
    with k fixed at k_range[0]) instead of drawing independent bits at
    ``solvable_rate``.
    """
    rng = random.Random(seed)
    bits_by_task: dict[str, dict[int, bool]] = {}
    for t in range(num_tasks):
        task_id = f"T{t:03d}"
        if solvable_counts is not None:
            k = k_range[0]  # pinned counts imply fixed-size tasks
            n_solvable = solvable_counts[t % len(solvable_counts)]
            flags = [True] * n_solvable + [False] * (k - n_solvable)
            rng.shuffle(flags)
            bits_by_task[task_id] = {i + 1: flags[i] for i in range(k)}
        else:
            k = rng.randint(*k_range)
            bits_by_task[task_id] = {i + 1: rng.random() < solvable_rate for i in range(k)}
    return population_from_bits(
        bits_by_task, seed=seed, zero_shot_simple_rate=zero_shot_simple_rate
    )


def write_population_files(population: Population, directory: Path) -> dict[str, Path]:
    """Write benchmark, exemplar, profile, and script files for CLI runs."""
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "tasks": directory / "tasks.jsonl",
        "exemplars": directory / "exemplars.json",
        "backends": directory / "backends.json",
        "device_script": directory / "device_script.json",
        "cloud_script": directory / "cloud_script.json",
    }
    with open(paths["tasks"], "w", encoding="utf-8") as fh:
        for task in population.tasks:
            fh.write(
                json.dumps(
                    {
                        "id": task.id,
                        "query": task.query,
                        "category": task.category,
                        "ground_truth": task.ground_truth,
                        "checker": task.checker.value,
                    }
                )
                + "\n"
            )
    paths["exemplars"].write_text(
        json.dumps(
            [
                {
                    "question": "Example question one",
                    "steps": ["find the first part", "combine the parts"],
                }
            ]
        ),
        encoding="utf-8",
    )
    paths["backends"].write_text(
        json.dumps(
            {
                "device": {"endpoint": "mock", "model_name": "pocket-slm"},
                "cloud": {
                    "endpoint": "mock",
                    "model_name": "sky-llm",
                    "price_per_prompt_token_cents": CLOUD_PROMPT_PRICE,
                    "price_per_completion_token_cents": CLOUD_COMPLETION_PRICE,
                },
            }
        ),
        encoding="utf-8",
    )
    paths["device_script"].write_text(json.dumps(population.device_script), encoding="utf-8")
    paths["cloud_script"].write_text(json.dumps(population.cloud_script), encoding="utf-8")
    return paths
