"""Sub-task scheduling: pairwise dependency elicitation, DAG construction, parallel batches.

Depth is the forward longest-path distance from source nodes; every node of
depth b lands in batch b, and batches run in ascending order while members of
one batch are independent and can run in parallel.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import SubTask, Task

logger = logging.getLogger(__name__)

DEPENDENCY_SYSTEM_PROMPT = (
    "Now we have a problem, which we have broken down into many sub-problems. "
    "I want you to understand the connection between these sub-problems"
)

_DEPENDENCY_LINE = re.compile(
    r"(?:Step|Subproblem|Sub-problem)\s*#?(\d+)\s*(?:\[[^\]]*\])?\s*->\s*"
    r"(?:Step|Subproblem|Sub-problem)\s*#?(\d+)",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class Dependency:
    """Edge: ``from_index`` must be answered before ``to_index`` starts."""

    from_index: int
    to_index: int

    def __post_init__(self):
        if self.from_index == self.to_index:
            raise ValueError(f"dependency {self.from_index} -> {self.to_index} is a self-loop")


@dataclass(frozen=True)
class DependencyGraph:
    nodes: frozenset[int]
    edges: tuple[Dependency, ...]
    depth: Mapping[int, int]
    batches: tuple[tuple[int, ...], ...]

    def predecessors(self, index: int) -> list[int]:
        return sorted(e.from_index for e in self.edges if e.to_index == index)


def _bracket_safe(text: str) -> str:
    # Bracket-delimited fields must themselves stay bracket-free to parse back.
    return text.replace("[", "(").replace("]", ")")


def build_dependency_prompt(task: Task, subtasks: Sequence[SubTask]) -> str:
    """Two-stage prompt: free-form understanding, then strictly formatted edges."""
    if not subtasks:
        raise ValueError("cannot build a dependency prompt with no sub-tasks")
    inline = "; ".join(f"{st.index}. {_bracket_safe(st.description)}" for st in subtasks)
    listing = "\n".join(f"Step {st.index} [ {_bracket_safe(st.description)} ]" for st in subtasks)
    return f"""The init problem is {task.query}. And the sub-problems are {inline}. Please provide your understanding of the relationships between these sub-problems. Your response must be concise.

Now we need to create standardized connections for the relationships between these sub-problems.
Now Given the following subtasks for question: [{_bracket_safe(task.query)}], determine the dependencies between them:

{listing}

Please list the dependencies in the format 'Subproblem A [xxx] -> Subproblem B [xxx]' indicating that Subproblem A must be completed before Subproblem B can start.
Please identify any potential conditional dependencies from a logical perspective.

Answer format: (Please strictly follow the format. Each dependency should be separated by a new line. No explanation is required.)
Step ID_i [ sub-problem i ] -> Step ID_j [ sub-problem j ]
Step ID_m [ sub-problem m ] -> Step ID_n [ sub-problem n ] ..."""


def parse_dependencies(response: str, subtasks: Sequence[SubTask]) -> list[Dependency]:
    """Extract arrow-format edges, dropping self-loops, unknown indices, duplicates.

    Never fatal: an unparseable response yields no edges and the graph
    degenerates to a single all-parallel batch.
    """
    known = {st.index for st in subtasks}
    seen: set[tuple[int, int]] = set()
    deps: list[Dependency] = []
    for m in _DEPENDENCY_LINE.finditer(response):
        src, dst = int(m.group(1)), int(m.group(2))
        if src == dst:
            logger.warning("dropping self-loop dependency %d -> %d", src, dst)
            continue
        if src not in known or dst not in known:
            logger.warning("dropping dependency %d -> %d referencing unknown sub-tasks", src, dst)
            continue
        if (src, dst) in seen:
            continue
        seen.add((src, dst))
        deps.append(Dependency(src, dst))
    return deps


def _find_back_edges(nodes: Sequence[int], edges: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Back edges in DFS discovery order (DFS from every node in ascending order)."""
    adjacency: dict[int, list[int]] = {n: [] for n in nodes}
    for src, dst in edges:
        adjacency[src].append(dst)
    for out in adjacency.values():
        out.sort()
    color: dict[int, int] = {n: 0 for n in nodes}  # 0 unvisited, 1 on stack, 2 done
    back: list[tuple[int, int]] = []

    def visit(node: int) -> None:
        color[node] = 1
        for nxt in adjacency[node]:
            if color[nxt] == 0:
                visit(nxt)
            elif color[nxt] == 1:
                back.append((node, nxt))
        color[node] = 2

    for n in nodes:
        if color[n] == 0:
            visit(n)
    return back


def build_graph(subtasks: Sequence[SubTask], deps: Sequence[Dependency]) -> DependencyGraph:
    """Repair cycles, then assign longest-path depths and group nodes into batches."""
    nodes = sorted(st.index for st in subtasks)
    node_set = set(nodes)
    for d in deps:
        if d.from_index not in node_set or d.to_index not in node_set:
            raise ValueError(f"dependency {d.from_index} -> {d.to_index} references unknown sub-tasks")

    edges = list(dict.fromkeys((d.from_index, d.to_index) for d in deps))
    while True:
        back = _find_back_edges(nodes, edges)
        if not back:
            break
        doomed = back[-1]
        logger.warning("removing cycle-forming dependency %d -> %d", *doomed)
        edges.remove(doomed)

    preds: dict[int, list[int]] = {n: [] for n in nodes}
    succs: dict[int, list[int]] = {n: [] for n in nodes}
    for src, dst in edges:
        preds[dst].append(src)
        succs[src].append(dst)

    depth: dict[int, int] = {}
    remaining = {n: len(preds[n]) for n in nodes}
    frontier = sorted(n for n in nodes if remaining[n] == 0)
    while frontier:
        node = frontier.pop(0)
        depth[node] = 0 if not preds[node] else 1 + max(depth[p] for p in preds[node])
        for nxt in sorted(succs[node]):
            remaining[nxt] -= 1
            if remaining[nxt] == 0:
                frontier.append(nxt)
        frontier.sort()

    n_batches = max(depth.values(), default=-1) + 1
    batches = tuple(
        tuple(sorted(n for n in nodes if depth[n] == b)) for b in range(n_batches)
    )
    return DependencyGraph(
        nodes=frozenset(nodes),
        edges=tuple(Dependency(s, t) for s, t in edges),
        depth=depth,
        batches=batches,
    )


def chain_graph(subtasks: Sequence[SubTask]) -> DependencyGraph:
    """Fully sequential graph 1 -> 2 -> ... -> k (the no-graph ablation shape)."""
    indices = sorted(st.index for st in subtasks)
    deps = [Dependency(a, b) for a, b in zip(indices, indices[1:])]
    return build_graph(subtasks, deps)


def to_dot(graph: DependencyGraph, subtasks: Sequence[SubTask]) -> str:
    """Render the dependency DAG as DOT text for inspection."""
    by_index = {st.index: st.description for st in subtasks}
    lines = ["digraph dependencies {"]
    for n in sorted(graph.nodes):
        label = by_index.get(n, "").replace('"', "'")
        lines.append(f'  n{n} [label="{n}: {label}"];')
    for e in graph.edges:
        lines.append(f"  n{e.from_index} -> n{e.to_index};")
    lines.append("}")
    return "\n".join(lines) + "\n"
