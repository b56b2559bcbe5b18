"""Lower-court multi-task stage: task graph, dependency cells, subtask heads.

Subtasks are evaluated in list order; each one runs a gated cell whose
inputs are the fact encoding plus the hidden/memory states of the subtasks
it depends on.  Every dependency must point to an earlier task, so the
graph is acyclic by construction.  Tasks with no dependencies consume a
single virtual predecessor with zero hidden state and zero memory cell so
the same cell equations apply uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .numerics import RngStream, Tensor


@dataclass(frozen=True)
class TaskGraph:
    """Ordered subtask list plus per-task dependency index sets (0-based)."""

    names: tuple[str, ...] = ("law_article", "charge", "penalty")
    dependencies: tuple[tuple[int, ...], ...] = ((), (0,), (0, 1))

    def __post_init__(self):
        if len(self.names) != len(self.dependencies):
            raise ValueError("one dependency set per task required")
        violations = self.validate()
        if violations:
            raise ValueError(f"dependency must point to an earlier task: {violations}")

    def validate(self) -> list[tuple[int, int]]:
        """Every (dependency, task) pair violating the earlier-task rule, 1-based."""
        found = []
        for j, deps in enumerate(self.dependencies):
            for i in deps:
                if not (0 <= i < j):
                    found.append((i + 1, j + 1))
        return found

    @classmethod
    def parallel(cls, names: tuple[str, ...] = ("law_article", "charge", "penalty")) -> "TaskGraph":
        """All dependency sets empty; the no-dependency ablation."""
        return cls(names=names, dependencies=tuple(() for _ in names))

    def to_dict(self) -> dict:
        return {"names": list(self.names),
                "dependencies": [list(d) for d in self.dependencies]}

    @classmethod
    def from_dict(cls, data: dict) -> "TaskGraph":
        return cls(names=tuple(data["names"]),
                   dependencies=tuple(tuple(d) for d in data["dependencies"]))


def validate_task_graph(names, dependencies) -> list[tuple[int, int]]:
    """Report every backward or self edge as a 1-based (dependency, task) pair."""
    found = []
    for j, deps in enumerate(dependencies):
        for i in deps:
            if not (0 <= i < j):
                found.append((i + 1, j + 1))
    return found


class DependencyCellParams:
    """Gates of one task's cell: per-predecessor matrices plus shared biases.

    Each gate matrix maps the concatenation [predecessor hidden; fact
    encoding] (cell_dim + 2H wide) to cell_dim; matrices are specific to the
    (predecessor, task) pair, never shared.
    """

    GATES = ("forget", "input", "output", "candidate")

    def __init__(self, num_predecessors: int, cell_dim: int, fact_dim: int, rng: RngStream):
        if num_predecessors < 1:
            raise ValueError("a cell needs at least the virtual predecessor")
        self.cell_dim = cell_dim
        in_dim = cell_dim + fact_dim
        self.gate_weights = {
            gate: [Tensor(nm.glorot_uniform((cell_dim, in_dim), rng), requires_grad=True)
                   for _ in range(num_predecessors)]
            for gate in self.GATES
        }
        self.gate_biases = {
            gate: Tensor(np.zeros(cell_dim), requires_grad=True) for gate in self.GATES
        }

    @property
    def num_predecessors(self) -> int:
        return len(self.gate_weights["forget"])

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {}
        for gate in self.GATES:
            for i, w in enumerate(self.gate_weights[gate]):
                params[f"{prefix}.{gate}.w{i}"] = w
            params[f"{prefix}.{gate}.b"] = self.gate_biases[gate]
        return params


def dependency_cell(h_fact: Tensor, predecessors: list[tuple[Tensor, Tensor]],
                    params: DependencyCellParams) -> tuple[Tensor, Tensor]:
    """One gated cell update from the fact encoding and predecessor states.

    ``predecessors`` holds (hidden, memory) pairs in dependency order; pass a
    single zero pair for tasks without dependencies.
    """
    if len(predecessors) != params.num_predecessors:
        raise ValueError(
            f"expected {params.num_predecessors} predecessors, got {len(predecessors)}")
    joined = [nm.concat([h_i, h_fact]) for h_i, _ in predecessors]

    def gate(name, squash):
        terms = [nm.matvec(w, joined[i]) for i, w in enumerate(params.gate_weights[name])]
        return squash(nm.add(nm.add_n(terms), params.gate_biases[name]))

    z_forget = gate("forget", nm.sigmoid)
    z_input = gate("input", nm.sigmoid)
    z_output = gate("output", nm.sigmoid)
    candidate = gate("candidate", nm.tanh)

    memory_sum = nm.add_n([c_i for _, c_i in predecessors])
    c_j = nm.add(nm.mul(z_forget, memory_sum), nm.mul(z_input, candidate))
    h_j = nm.mul(z_output, nm.tanh(c_j))
    return h_j, c_j


class SubtaskHead:
    """FC-plus-softmax classifier of one subtask."""

    def __init__(self, cell_dim: int, num_labels: int, rng: RngStream):
        self.w = Tensor(nm.glorot_uniform((num_labels, cell_dim), rng), requires_grad=True)
        self.b = Tensor(np.zeros(num_labels), requires_grad=True)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}

    def __call__(self, h: Tensor) -> Tensor:
        return nm.softmax(nm.affine(h, self.w, self.b))


@dataclass
class LowerCourtOutput:
    """Everything the lower-court stage produces for one document."""

    distributions: list[Tensor]
    hidden_states: list[Tensor]
    memory_cells: list[Tensor]
    h_fact: Tensor
    losses: list[Tensor] = field(default_factory=list)


class LowerCourtParams:
    """Cells and heads for every task in the graph."""

    def __init__(self, graph: TaskGraph, cell_dim: int, fact_dim: int,
                 label_sizes: tuple[int, ...], rng: RngStream):
        if len(label_sizes) != len(graph.names):
            raise ValueError("one label size per task required")
        self.graph = graph
        self.cell_dim = cell_dim
        self.cells = [
            DependencyCellParams(max(len(deps), 1), cell_dim, fact_dim, rng)
            for deps in graph.dependencies
        ]
        self.heads = [SubtaskHead(cell_dim, n, rng) for n in label_sizes]

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {}
        for name, cell, head in zip(self.graph.names, self.cells, self.heads):
            params.update(cell.named_parameters(f"{prefix}.cell.{name}"))
            params.update(head.named_parameters(f"{prefix}.head.{name}"))
        return params


def run_lower_court(h_fact: Tensor, params: LowerCourtParams) -> LowerCourtOutput:
    """Evaluate every subtask in list order, threading dependency states."""
    hidden: dict[int, Tensor] = {}
    memory: dict[int, Tensor] = {}
    dists: list[Tensor] = []
    for j, deps in enumerate(params.graph.dependencies):
        if deps:
            preds = [(hidden[i], memory[i]) for i in deps]
        else:
            zero = nm.zeros(params.cell_dim)
            preds = [(zero, zero)]
        h_j, c_j = dependency_cell(h_fact, preds, params.cells[j])
        hidden[j] = h_j
        memory[j] = c_j
        dists.append(params.heads[j](h_j))
    return LowerCourtOutput(
        distributions=dists,
        hidden_states=[hidden[j] for j in range(len(params.graph.names))],
        memory_cells=[memory[j] for j in range(len(params.graph.names))],
        h_fact=h_fact,
    )


def lower_subtask_loss(distribution: Tensor, truth_index: int) -> Tensor:
    """Cross-entropy of one subtask; delegates to the numerics primitive."""
    return nm.cross_entropy(distribution, truth_index)
