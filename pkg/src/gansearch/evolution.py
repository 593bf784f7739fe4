"""Pareto ranking, parent selection and offspring generation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .genome import ArchitectureGenome, SearchSpaceSpec, crossover, mutate
from .metrics import ObjectiveVector

DEFAULT_OBJECTIVES = ("fid_like", "inv_is")
OBJECTIVE_NAMES = ("fid_like", "inv_is", "size")
MAX_RETRIES = 50


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Individual:
    id: int
    genome: ArchitectureGenome
    objectives: ObjectiveVector
    rank: int | None = None


RankPartition = list[list[int]]


def dominates(a: ObjectiveVector, b: ObjectiveVector, objectives: Sequence[str] = DEFAULT_OBJECTIVES) -> bool:
    """True when ``a`` is no worse than ``b`` everywhere and strictly better somewhere."""
    strictly = False
    for key in objectives:
        x, y = getattr(a, key), getattr(b, key)
        if x > y:
            return False
        if x < y:
            strictly = True
    return strictly


def non_dominated_sort(pop: Sequence[Individual], objectives: Sequence[str] = DEFAULT_OBJECTIVES) -> RankPartition:
    """Front peeling via domination counts; collapsed individuals form the last rank."""
    healthy = [i for i, ind in enumerate(pop) if not ind.objectives.collapsed]
    collapsed = [i for i, ind in enumerate(pop) if ind.objectives.collapsed]

    dominated_by: dict[int, list[int]] = {i: [] for i in healthy}
    count = {i: 0 for i in healthy}
    for p in healthy:
        for q in healthy:
            if p == q:
                continue
            if dominates(pop[p].objectives, pop[q].objectives, objectives):
                dominated_by[p].append(q)
            elif dominates(pop[q].objectives, pop[p].objectives, objectives):
                count[p] += 1

    fronts: RankPartition = []
    current = [i for i in healthy if count[i] == 0]
    while current:
        fronts.append(sorted(current))
        nxt = []
        for p in current:
            for q in dominated_by[p]:
                count[q] -= 1
                if count[q] == 0:
                    nxt.append(q)
        current = nxt
    if collapsed:
        fronts.append(collapsed)
    return fronts


def assign_ranks(pop: Sequence[Individual], partition: RankPartition) -> list[Individual]:
    rank_of = {i: r for r, members in enumerate(partition) for i in members}
    return [replace(ind, rank=rank_of[i]) for i, ind in enumerate(pop)]


def tie_break_key(ind: Individual):
    o = ind.objectives
    return (o.fid_like, o.inv_is, o.size, ind.genome.hash)


def select_parents(pop: Sequence[Individual], partition: RankPartition, count: int | None = None) -> list[Individual]:
    """Fill ``count`` slots from rank 0 upward; the overflowing rank is cut by the tie-break order."""
    count = len(pop) // 2 if count is None else count
    if count > len(pop):
        raise SelectionError(f"cannot select {count} parents from {len(pop)} individuals")
    n_healthy = sum(1 for ind in pop if not ind.objectives.collapsed)
    if n_healthy < count:
        raise SelectionError(f"only {n_healthy} healthy individuals for {count} parent slots")
    out: list[Individual] = []
    for members in partition:
        ranked = sorted((pop[i] for i in members), key=tie_break_key)
        out.extend(ranked[: count - len(out)])
        if len(out) == count:
            break
    return out


def best_individual(pop: Sequence[Individual], partition: RankPartition) -> Individual:
    return min((pop[i] for i in partition[0]), key=tie_break_key)


def make_offspring(
    parents: Sequence[ArchitectureGenome],
    space: SearchSpaceSpec,
    p_cross: float = 0.3,
    p_mut: float = 0.5,
    target: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[ArchitectureGenome]:
    if len(parents) < 2:
        raise SelectionError("make_offspring needs at least 2 parents")
    rng = np.random.default_rng(0) if rng is None else rng
    target = len(parents) if target is None else target
    dedup = p_cross > 0 or p_mut > 0
    seen = {g.hash for g in parents}
    out: list[ArchitectureGenome] = []

    def build() -> list[ArchitectureGenome]:
        i, j = rng.choice(len(parents), size=2, replace=False)
        if rng.random() < p_cross:
            cands = list(crossover(parents[i], parents[j], rng))
        else:
            cands = [parents[i]]
        return [mutate(c, rng) if rng.random() < p_mut else c for c in cands]

    while len(out) < target:
        for _ in range(MAX_RETRIES if dedup else 1):
            cands = build()
            fresh = [c for k, c in enumerate(cands) if c.hash not in seen and c not in cands[:k]]
            if fresh or not dedup:
                break
        # After MAX_RETRIES failed attempts the duplicates are accepted.
        chosen = (fresh or cands) if dedup else cands
        for c in chosen[: target - len(out)]:
            out.append(c)
            seen.add(c.hash)
    return out
