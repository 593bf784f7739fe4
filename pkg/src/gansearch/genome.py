"""Search space description and the one-hot architecture encoding.

A genome picks exactly one candidate operation per edge slot.  Generator cells
expand the feature width by two (the dense analogue of up-sampling) and
discriminator cells halve it; both keep the five-node cell layout with seven
edges per cell.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

GENERATOR = "generator"
DISCRIMINATOR = "discriminator"
ROLES = (GENERATOR, DISCRIMINATOR)


class GenomeError(ValueError):
    pass


@dataclass(frozen=True)
class OpSpec:
    name: str
    kind: str  # none | identity | dense | linear | repeat | pool
    activation: str | None = None
    width_factor: float = 1.0  # out_dim / in_dim

    @property
    def parameterized(self) -> bool:
        return self.kind in ("dense", "linear")

    def n_params(self, in_dim: int, out_dim: int) -> int:
        if not self.parameterized:
            return 0
        return in_dim * out_dim + out_dim


OP_REGISTRY: dict[str, OpSpec] = {
    op.name: op
    for op in (
        OpSpec("none", "none"),
        OpSpec("identity", "identity"),
        OpSpec("dense_tanh", "dense", "tanh"),
        OpSpec("dense_relu", "dense", "relu"),
        OpSpec("dense_elu", "dense", "elu"),
        OpSpec("repeat_double", "repeat", width_factor=2.0),
        OpSpec("linear_expand", "linear", width_factor=2.0),
        OpSpec("mean_pool_halve", "pool", width_factor=0.5),
        OpSpec("linear_contract", "linear", width_factor=0.5),
    )
}

NORMAL_OPS = ("none", "identity", "dense_tanh", "dense_relu", "dense_elu")
EXPAND_OPS = ("repeat_double", "linear_expand")
REDUCE_OPS = ("mean_pool_halve", "linear_contract")


@dataclass(frozen=True)
class CellEdge:
    role: str  # expand | normal | reduce
    src: int
    dst: int
    candidates: tuple[str, ...]


# Node 0 is the previous cell's output, node 4 the cell output.
UP_CELL = (
    CellEdge("expand", 0, 1, EXPAND_OPS),
    CellEdge("expand", 0, 2, EXPAND_OPS),
    CellEdge("normal", 1, 3, NORMAL_OPS),
    CellEdge("normal", 1, 4, NORMAL_OPS),
    CellEdge("normal", 2, 3, NORMAL_OPS),
    CellEdge("normal", 2, 4, NORMAL_OPS),
    CellEdge("normal", 3, 4, NORMAL_OPS),
)

# The up cell with every edge reversed and nodes relabelled i -> 4 - i.
DOWN_CELL = (
    CellEdge("normal", 0, 1, NORMAL_OPS),
    CellEdge("normal", 0, 2, NORMAL_OPS),
    CellEdge("normal", 0, 3, NORMAL_OPS),
    CellEdge("normal", 1, 2, NORMAL_OPS),
    CellEdge("normal", 1, 3, NORMAL_OPS),
    CellEdge("reduce", 2, 4, REDUCE_OPS),
    CellEdge("reduce", 3, 4, REDUCE_OPS),
)

NODES_PER_CELL = 5


@dataclass(frozen=True)
class EdgeSlot:
    index: int
    cell: int
    role: str
    src: int
    dst: int
    candidates: tuple[str, ...]
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class SearchSpaceSpec:
    """Cells of the supernet for one role.

    ``io_dims[c]`` and ``io_dims[c + 1]`` are the feature widths entering and
    leaving cell ``c``.  The fixed stem maps ``in_dim`` to ``io_dims[0]`` and
    the fixed head maps ``io_dims[-1]`` to ``out_dim``; neither is searched.
    """

    role: str
    cells: int
    edges_per_cell: tuple[CellEdge, ...]
    io_dims: tuple[int, ...]
    in_dim: int
    out_dim: int
    stem_activation: str = "relu"
    op_registry: dict[str, OpSpec] = field(default_factory=lambda: dict(OP_REGISTRY), compare=False)
    space_id: str = ""

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise GenomeError("invalid search space: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.role not in ROLES:
            out.append(f"unknown role {self.role!r}")
        if len(self.io_dims) != self.cells + 1:
            out.append("io_dims must have cells + 1 entries")
            return out
        for e in self.edges_per_cell:
            if len(e.candidates) < 2:
                out.append(f"edge {e.src}->{e.dst} has fewer than 2 candidates")
            if e.role == "normal" and "none" not in e.candidates:
                out.append(f"normal edge {e.src}->{e.dst} lacks 'none'")
            if e.role in ("expand", "reduce") and "none" in e.candidates:
                out.append(f"{e.role} edge {e.src}->{e.dst} must not offer 'none'")
            if not (0 <= e.src < e.dst < NODES_PER_CELL):
                out.append(f"edge {e.src}->{e.dst} breaks node order")
            for name in e.candidates:
                if name not in self.op_registry:
                    out.append(f"unknown op {name!r}")
        for c in range(self.cells):
            w_in, w_out = self.io_dims[c], self.io_dims[c + 1]
            for e in self.edges_per_cell:
                a, b = self._edge_dims(e, w_in, w_out)
                for name in e.candidates:
                    op = self.op_registry.get(name)
                    if op is not None and op.width_factor * a != b:
                        out.append(f"op {name} cannot map width {a} to {b} in cell {c}")
        return out

    def _edge_dims(self, edge: CellEdge, w_in: int, w_out: int) -> tuple[int, int]:
        # Expand edges leave node 0, reduce edges enter node 4; normal edges run
        # at the cell's inner width.
        inner = w_out if self.role == GENERATOR else w_in
        if edge.role == "expand":
            return w_in, inner
        if edge.role == "reduce":
            return inner, w_out
        return inner, inner

    @cached_property
    def slots(self) -> tuple[EdgeSlot, ...]:
        out = []
        for c in range(self.cells):
            w_in, w_out = self.io_dims[c], self.io_dims[c + 1]
            for e in self.edges_per_cell:
                a, b = self._edge_dims(e, w_in, w_out)
                out.append(EdgeSlot(len(out), c, e.role, e.src, e.dst, e.candidates, a, b))
        return tuple(out)

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    def op(self, edge_index: int, op_index: int) -> OpSpec:
        return self.op_registry[self.slots[edge_index].candidates[op_index]]

    def parameterized_pairs(self) -> list[tuple[int, int]]:
        return [
            (s.index, j)
            for s in self.slots
            for j, name in enumerate(s.candidates)
            if self.op_registry[name].parameterized
        ]


def generator_space(noise_dim: int = 8, io_dims: Sequence[int] = (8, 16, 32, 64), data_dim: int = 2) -> SearchSpaceSpec:
    return SearchSpaceSpec(
        role=GENERATOR,
        cells=len(io_dims) - 1,
        edges_per_cell=UP_CELL,
        io_dims=tuple(io_dims),
        in_dim=noise_dim,
        out_dim=data_dim,
        stem_activation="relu",
        space_id="g-" + "-".join(map(str, io_dims)),
    )


def discriminator_space(data_dim: int = 2, io_dims: Sequence[int] = (64, 32, 16, 8)) -> SearchSpaceSpec:
    return SearchSpaceSpec(
        role=DISCRIMINATOR,
        cells=len(io_dims) - 1,
        edges_per_cell=DOWN_CELL,
        io_dims=tuple(io_dims),
        in_dim=data_dim,
        out_dim=1,
        stem_activation="relu",
        space_id="d-" + "-".join(map(str, io_dims)),
    )


@dataclass(frozen=True)
class EdgeGene:
    edge_index: int
    onehot: tuple[int, ...]

    @property
    def choice(self) -> int:
        return self.onehot.index(1)


@dataclass(frozen=True)
class ArchitectureGenome:
    role: str
    genes: tuple[EdgeGene, ...]

    @cached_property
    def hash(self) -> str:
        payload = self.role + "|" + ";".join("".join(map(str, g.onehot)) for g in self.genes)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @property
    def choices(self) -> tuple[int, ...]:
        return tuple(g.choice for g in self.genes)

    def op_names(self, space: SearchSpaceSpec) -> list[str]:
        return [space.slots[i].candidates[c] for i, c in enumerate(self.choices)]

    def active_pairs(self, space: SearchSpaceSpec) -> list[tuple[int, int]]:
        """(edge, op) pairs whose op owns parameters."""
        return [(i, c) for i, c in enumerate(self.choices) if space.op(i, c).parameterized]


def _onehot(n: int, k: int) -> tuple[int, ...]:
    return tuple(1 if j == k else 0 for j in range(n))


def genome_from_choices(space: SearchSpaceSpec, choices: Sequence[int]) -> ArchitectureGenome:
    if len(choices) != space.n_slots:
        raise GenomeError(f"expected {space.n_slots} choices, got {len(choices)}")
    genes = tuple(
        EdgeGene(i, _onehot(len(s.candidates), int(k))) for i, (s, k) in enumerate(zip(space.slots, choices))
    )
    return ArchitectureGenome(space.role, genes)


def genome_from_ops(space: SearchSpaceSpec, ops: Sequence[str]) -> ArchitectureGenome:
    """Build a genome from op names, one per slot; a list of one cell's names is repeated per cell."""
    ops = list(ops)
    if len(ops) == len(space.edges_per_cell):
        ops = ops * space.cells
    if len(ops) != space.n_slots:
        raise GenomeError(f"expected {space.n_slots} op names, got {len(ops)}")
    try:
        choices = [s.candidates.index(name) for s, name in zip(space.slots, ops)]
    except ValueError as exc:
        raise GenomeError(str(exc)) from None
    return genome_from_choices(space, choices)


def random_genome(space: SearchSpaceSpec, role: str, rng: np.random.Generator) -> ArchitectureGenome:
    if role != space.role:
        raise GenomeError(f"space is for {space.role}, not {role}")
    return genome_from_choices(space, [int(rng.integers(len(s.candidates))) for s in space.slots])


def validate(genome: ArchitectureGenome, space: SearchSpaceSpec) -> list[str]:
    violations = []
    if genome.role != space.role:
        violations.append(f"role mismatch: genome {genome.role}, space {space.role}")
    if len(genome.genes) != space.n_slots:
        violations.append(f"length mismatch: {len(genome.genes)} genes for {space.n_slots} slots")
    for i, (gene, slot) in enumerate(zip(genome.genes, space.slots)):
        if gene.edge_index != i:
            violations.append(f"edge index {gene.edge_index} at position {i}")
        if len(gene.onehot) != len(slot.candidates):
            violations.append(f"wrong gene length at edge {i}")
        if sum(1 for b in gene.onehot if b == 1) != 1 or any(b not in (0, 1) for b in gene.onehot):
            violations.append(f"not one-hot at edge {i}")
    return violations


def crossover(
    parent_a: ArchitectureGenome,
    parent_b: ArchitectureGenome,
    rng: np.random.Generator,
    index: int | None = None,
) -> tuple[ArchitectureGenome, ArchitectureGenome]:
    """Swap one edge's one-hot sequence between two parents."""
    if parent_a.role != parent_b.role:
        raise GenomeError("crossover between different roles")
    if len(parent_a.genes) != len(parent_b.genes) or any(
        len(x.onehot) != len(y.onehot) for x, y in zip(parent_a.genes, parent_b.genes)
    ):
        raise GenomeError("crossover between different spaces")
    k = int(rng.integers(len(parent_a.genes))) if index is None else index
    ga, gb = list(parent_a.genes), list(parent_b.genes)
    ga[k], gb[k] = gb[k], ga[k]
    return ArchitectureGenome(parent_a.role, tuple(ga)), ArchitectureGenome(parent_b.role, tuple(gb))


def mutate(genome: ArchitectureGenome, rng: np.random.Generator) -> ArchitectureGenome:
    """Move the 1 of one uniformly chosen edge to another candidate."""
    k = int(rng.integers(len(genome.genes)))
    gene = genome.genes[k]
    n = len(gene.onehot)
    alternatives = [j for j in range(n) if j != gene.choice]
    new = alternatives[int(rng.integers(len(alternatives)))]
    genes = list(genome.genes)
    genes[k] = EdgeGene(k, _onehot(n, new))
    return ArchitectureGenome(genome.role, tuple(genes))


def param_count(genome: ArchitectureGenome, space: SearchSpaceSpec) -> int:
    total = 0
    for slot, k in zip(space.slots, genome.choices):
        total += space.op_registry[slot.candidates[k]].n_params(slot.in_dim, slot.out_dim)
    return total


def hamming(a: ArchitectureGenome, b: ArchitectureGenome) -> int:
    return sum(1 for x, y in zip(a.genes, b.genes) if x.onehot != y.onehot)


def genome_to_json(genome: ArchitectureGenome, space: SearchSpaceSpec) -> dict:
    return {"role": genome.role, "space_id": space.space_id, "genes": [list(g.onehot) for g in genome.genes]}


def genome_from_json(obj: dict, space: SearchSpaceSpec) -> ArchitectureGenome:
    if obj.get("space_id") not in (None, space.space_id):
        raise GenomeError(f"genome space {obj.get('space_id')!r} does not match {space.space_id!r}")
    try:
        genes = tuple(EdgeGene(i, tuple(int(b) for b in bits)) for i, bits in enumerate(obj["genes"]))
        genome = ArchitectureGenome(obj["role"], genes)
    except (KeyError, TypeError) as exc:
        raise GenomeError(f"malformed genome file: {exc}") from None
    violations = validate(genome, space)
    if violations:
        raise GenomeError("; ".join(violations))
    return genome


def save_genome(path: str | Path, genome: ArchitectureGenome, space: SearchSpaceSpec) -> None:
    Path(path).write_text(json.dumps(genome_to_json(genome, space)) + "\n")


def load_genome(path: str | Path, space: SearchSpaceSpec) -> ArchitectureGenome:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GenomeError(f"{path}: {exc}") from None
    return genome_from_json(obj, space)
