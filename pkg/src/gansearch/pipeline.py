"""Two-stage search orchestration, the coupled baseline, and full training."""

from __future__ import annotations

import json
import logging
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .config import SearchConfig
from .data import NoiseSource, TargetDistribution, sample_real
from .evolution import (
    Individual,
    assign_ranks,
    make_offspring,
    non_dominated_sort,
    select_parents,
    SelectionError,
)
from .gan import AdamConfig, GanPair, LossKind, gan_train_batch
from .genome import (
    DISCRIMINATOR,
    GENERATOR,
    ArchitectureGenome,
    SearchSpaceSpec,
    discriminator_space,
    generator_space,
    genome_from_ops,
    load_genome,
    param_count,
    random_genome,
    save_genome,
)
from .metrics import GaussianStats, ObjectiveVector, evaluate_individual, gaussian_fit, is_like_score, frechet_distance, mode_coverage
from .supernet import (
    StandaloneNet,
    SuperNet,
    clone_net,
    copy_weights,
    extract_subnet,
    forward,
    init_standalone,
    init_supernet,
    save_checkpoint,
    uniform_path_sample,
    weight_digest,
)

log = logging.getLogger(__name__)

# Hand-picked discriminator for stage-1: two stacked dense layers plus a pooled
# skip per cell.
DEFAULT_D_CELL = ("dense_relu", "none", "identity", "dense_relu", "none", "linear_contract", "mean_pool_halve")
# A plain chain of dense layers.
SIMPLE_D_CELL = ("dense_relu", "none", "none", "dense_relu", "none", "linear_contract", "mean_pool_halve")
# Generator used when discriminators are searched first.
DEFAULT_G_CELL = ("linear_expand", "repeat_double", "dense_relu", "none", "none", "identity", "dense_relu")


class SearchError(RuntimeError):
    pass


def stream(seed: int, *tags) -> np.random.Generator:
    """Independent generator for one named purpose within a run."""
    words = [seed] + [zlib.crc32(str(t).encode()) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(words))


def stream_seed(seed: int, *tags) -> int:
    return int(stream(seed, *tags).integers(2**31))


@dataclass
class SearchContext:
    config: SearchConfig
    g_space: SearchSpaceSpec
    d_space: SearchSpaceSpec
    dist: TargetDistribution
    noise: NoiseSource
    train: np.ndarray
    val_stats: GaussianStats
    sink: "LogSink" = None

    @classmethod
    def build(cls, config: SearchConfig, sink: "LogSink | None" = None) -> "SearchContext":
        dist = TargetDistribution.from_config(config.data)
        train = sample_real(dist, config.n_train, stream(config.seed, "train-data"))
        val = sample_real(dist, config.n_eval, stream(config.seed, "val-data"))
        return cls(
            config,
            generator_space(config.noise_dim, config.g_dims),
            discriminator_space(2, config.d_dims),
            dist,
            NoiseSource(config.noise_dim),
            train,
            gaussian_fit(val),
            sink or LogSink(),
        )

    def pair(self, g_net, g_genome, d_net, d_genome) -> GanPair:
        c = self.config
        return GanPair(
            g_net, d_net, g_genome, d_genome, LossKind(c.loss_kind), c.batch_g, c.batch_d,
            AdamConfig(c.lr, c.beta1, c.beta2, c.eps), AdamConfig(c.lr, c.beta1, c.beta2, c.eps),
        )

    def batches(self, rng: np.random.Generator) -> Iterator[np.ndarray]:
        """One epoch of real batches in a fresh shuffled order."""
        half = self.config.batch_d // 2
        order = rng.permutation(len(self.train))
        for start in range(0, len(order) - half + 1, half):
            yield self.train[order[start:start + half]]

    def batches_per_epoch(self) -> int:
        return len(self.train) // (self.config.batch_d // 2)

    def evaluate(self, gens: Sequence, genomes: Sequence, eval_seed: int, n_eval: int | None = None) -> list[ObjectiveVector]:
        # Every individual in a round sees the same evaluation noise.
        n_eval = n_eval or self.config.n_eval

        def one(k):
            return evaluate_individual(gens[k], genomes[k], self.dist, self.val_stats, n_eval, np.random.default_rng(eval_seed))

        return _pmap(one, range(len(gens)), self.config.workers)


def _pmap(fn: Callable, items, workers: int) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- logging ---------------------------------------------------------------

class LogSink:
    """Collects round records and optionally streams them as JSONL."""

    def __init__(self, out_dir: str | Path | None = None, mode: str = "decoupled"):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.mode = mode
        self.records: dict[str, list[dict]] = {}
        self._t0 = time.perf_counter()
        if self.out_dir is not None:
            for sub in ("genomes", "checkpoints", "plots"):
                (self.out_dir / sub).mkdir(parents=True, exist_ok=True)

    def emit(self, stream_name: str, record: dict) -> None:
        record = dict(record, mode=self.mode, wallclock=round(time.perf_counter() - self._t0, 3))
        self.records.setdefault(stream_name, []).append(record)
        if self.out_dir is not None:
            with open(self.out_dir / f"{stream_name}.jsonl", "a") as fh:
                fh.write(json.dumps(_jsonable(record), sort_keys=True) + "\n")

    def checkpoint(self, name: str, net) -> None:
        if self.out_dir is not None:
            save_checkpoint(self.out_dir / "checkpoints" / f"{name}.npz", net)

    def genome(self, name: str, genome: ArchitectureGenome, space: SearchSpaceSpec) -> None:
        if self.out_dir is not None:
            save_genome(self.out_dir / "genomes" / f"{name}.json", genome, space)


def _jsonable(record: dict) -> dict:
    out = {}
    for k, v in record.items():
        if isinstance(v, float) and not np.isfinite(v):
            v = None
        elif isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out


def _round_records(stage: str, cycle: int, r: int, role: str, pop: list[Individual], parents: list[Individual], partners=None, extra=None) -> list[dict]:
    parent_ids = {p.id for p in parents}
    best_id = parents[0].id
    out = []
    for ind in pop:
        o = ind.objectives
        rec = {
            "stage": stage,
            "cycle": cycle,
            "round": r,
            "individual": ind.id,
            "role": role,
            "genome_hash": ind.genome.hash,
            "choices": list(ind.genome.choices),
            "partner_hash": partners[ind.id].hash if partners is not None else None,
            "fid_like": o.fid_like,
            "inv_is": o.inv_is,
            "is_like": o.is_like,
            "size": o.size,
            "rank": ind.rank,
            "collapsed": o.collapsed,
            "parent": ind.id in parent_ids,
            "best": ind.id == best_id,
            "g_digest_start": None,
            "g_digest": None,
        }
        if extra is not None:
            rec.update(extra[ind.id])
        out.append(rec)
    return out


# -- phases ----------------------------------------------------------------

@dataclass
class WarmupResult:
    population: list[ArchitectureGenome]
    activation_counts: list[np.ndarray]
    steps: int


def warmup(
    ctx: SearchContext,
    supernet: SuperNet,
    counterpart: StandaloneNet,
    epochs: int,
    rng: np.random.Generator,
    P: int | None = None,
) -> WarmupResult:
    """Train ``supernet`` on one uniformly sampled path per batch, then draw the first population."""
    space = supernet.space
    counts = [np.zeros(len(s.candidates), dtype=int) for s in space.slots]
    steps = 0
    for _ in range(epochs):
        for real in ctx.batches(rng):
            path = uniform_path_sample(space, space.role, rng)
            for i, c in enumerate(path.choices):
                counts[i][c] += 1
            if space.role == GENERATOR:
                pair = ctx.pair(supernet, path, counterpart, None)
            else:
                pair = ctx.pair(counterpart, None, supernet, path)
            res = gan_train_batch(pair, real, ctx.noise, rng)
            steps += 1
            if not res.finite:
                raise SearchError(f"non-finite loss during {space.role} warm-up at step {steps}")
    P = ctx.config.P if P is None else P
    population = [random_genome(space, space.role, rng) for _ in range(P)]
    return WarmupResult(population, counts, steps)


def _evolve(ctx: SearchContext, space: SearchSpaceSpec, parents: list[Individual], rng) -> list[ArchitectureGenome]:
    c = ctx.config
    genomes = [p.genome for p in parents]
    return genomes + make_offspring(genomes, space, c.p_cross, c.p_mut, c.P - len(genomes), rng)


def _rank_and_select(ctx: SearchContext, genomes, objectives, stage: str, r: int):
    pop = [Individual(i, g, o) for i, (g, o) in enumerate(zip(genomes, objectives))]
    if all(o.collapsed for o in objectives):
        raise SearchError(f"{stage} round {r}: every individual collapsed")
    partition = non_dominated_sort(pop, ctx.config.objectives)
    pop = assign_ranks(pop, partition)
    try:
        parents = select_parents(pop, partition, ctx.config.P // 2)
    except SelectionError as exc:
        raise SearchError(f"{stage} round {r}: {exc}") from None
    return pop, parents


@dataclass
class Stage1Result:
    alpha_star: ArchitectureGenome
    g_star: StandaloneNet
    supernet: SuperNet
    fixed_d: StandaloneNet
    logs: list[dict]
    warmup_counts: list[np.ndarray] = field(default_factory=list)


def stage1_search(ctx: SearchContext, fixed_d: StandaloneNet, stage: str = "stage1", cycle: int = 0) -> Stage1Result:
    """Search generators on a shared supernet, all trained against one discriminator."""
    c = ctx.config
    if c.mode != "decoupled":
        raise SearchError("stage1_search requires mode = decoupled")
    rng = stream(c.seed, stage, cycle, "train")
    evo_rng = stream(c.seed, stage, cycle, "evolve")
    supernet = init_supernet(ctx.g_space, GENERATOR, seed=stream_seed(c.seed, stage, cycle, "init-g"))
    wu = warmup(ctx, supernet, fixed_d, c.warmup_epochs, rng)
    genomes = wu.population
    logs: list[dict] = []
    best = None
    for r in range(c.R):
        diverged = set()
        for _ in range(c.E):
            for real in ctx.batches(rng):
                i = int(rng.integers(c.P))
                res = gan_train_batch(ctx.pair(supernet, genomes[i], fixed_d, None), real, ctx.noise, rng)
                if not res.finite:
                    diverged.add(i)
        objectives = ctx.evaluate([supernet] * c.P, genomes, stream_seed(c.seed, stage, cycle, "eval", r))
        objectives = [ObjectiveVector.collapsed_sentinel(o.size) if i in diverged else o for i, o in enumerate(objectives)]
        pop, parents = _rank_and_select(ctx, genomes, objectives, stage, r)
        records = _round_records(stage, cycle, r, GENERATOR, pop, parents)
        for rec in records:
            ctx.sink.emit(stage, rec)
        logs.extend(records)
        ctx.sink.checkpoint(f"{stage}_c{cycle}_r{r}_supernet_g", supernet)
        best = parents[0]
        log.info("%s round %d: best fid %.4f is %.3f", stage, r, best.objectives.fid_like, best.objectives.is_like)
        if r < c.R - 1:
            genomes = _evolve(ctx, ctx.g_space, parents, evo_rng)
    g_star = extract_subnet(supernet, best.genome)
    ctx.sink.genome(f"{stage}_c{cycle}_alpha_star", best.genome, ctx.g_space)
    return Stage1Result(best.genome, g_star, supernet, fixed_d, logs, wu.activation_counts)


def weight_reset(generators: Sequence[StandaloneNet], best_index: int, copy_moments: bool = True) -> None:
    src = generators[best_index]
    for k, g in enumerate(generators):
        if k != best_index:
            copy_weights(g, src, copy_moments)


@dataclass
class Stage2Result:
    beta_star: ArchitectureGenome
    g_best: StandaloneNet
    d_best: StandaloneNet
    supernet: SuperNet
    logs: list[dict]
    warmup_counts: list[np.ndarray] = field(default_factory=list)


def stage2_search(ctx: SearchContext, alpha_star: ArchitectureGenome, g_star: StandaloneNet, stage: str = "stage2", cycle: int = 0) -> Stage2Result:
    """Search discriminators, each paired one-to-one with its own copy of the best generator."""
    c = ctx.config
    if c.mode != "decoupled":
        raise SearchError("stage2_search requires mode = decoupled")
    if g_star.genome != alpha_star:
        raise SearchError("g_star weights do not belong to alpha_star")
    rng = stream(c.seed, stage, cycle, "train")
    evo_rng = stream(c.seed, stage, cycle, "evolve")
    supernet = init_supernet(ctx.d_space, DISCRIMINATOR, seed=stream_seed(c.seed, stage, cycle, "init-d"))
    # Warm-up trains a scratch copy so every pair below starts from g_star itself.
    wu = warmup(ctx, supernet, clone_net(g_star), c.warmup_epochs, rng)
    genomes = wu.population
    gens = [clone_net(g_star) for _ in range(c.P)]
    logs: list[dict] = []
    best = None
    for r in range(c.R):
        start_digests = [weight_digest(g) for g in gens]
        diverged = set()
        for _ in range(c.E):
            for real in ctx.batches(rng):
                i = int(rng.integers(c.P))
                res = gan_train_batch(ctx.pair(gens[i], None, supernet, genomes[i]), real, ctx.noise, rng)
                if not res.finite:
                    diverged.add(i)
        objectives = ctx.evaluate(gens, [alpha_star] * c.P, stream_seed(c.seed, stage, cycle, "eval", r))
        objectives = [
            ObjectiveVector.collapsed_sentinel(0) if i in diverged else o for i, o in enumerate(objectives)
        ]
        objectives = [replace(o, size=param_count(g, ctx.d_space)) for o, g in zip(objectives, genomes)]
        pop, parents = _rank_and_select(ctx, genomes, objectives, stage, r)
        extra = [{"g_digest_start": start_digests[k], "g_digest": weight_digest(gens[k])} for k in range(c.P)]
        records = _round_records(stage, cycle, r, DISCRIMINATOR, pop, parents, [alpha_star] * c.P, extra)
        for rec in records:
            ctx.sink.emit(stage, rec)
        logs.extend(records)
        ctx.sink.checkpoint(f"{stage}_c{cycle}_r{r}_supernet_d", supernet)
        best = parents[0]
        g_best = clone_net(gens[best.id])
        ctx.sink.checkpoint(f"{stage}_c{cycle}_r{r}_g_best", g_best)
        log.info("%s round %d: best fid %.4f is %.3f", stage, r, best.objectives.fid_like, best.objectives.is_like)
        if r < c.R - 1:
            # Parents keep their own generator; offspring inherit the dropped ones.
            chosen = [p.id for p in parents]
            rest = [k for k in range(c.P) if k not in set(chosen)]
            if c.weight_resetting:
                weight_reset(gens, best.id, copy_moments=not c.reset_moments)
            gens = [gens[k] for k in chosen + rest]
            genomes = _evolve(ctx, ctx.d_space, parents, evo_rng)
    d_best = extract_subnet(supernet, best.genome)
    ctx.sink.genome(f"{stage}_c{cycle}_beta_star", best.genome, ctx.d_space)
    return Stage2Result(best.genome, g_best, d_best, supernet, logs, wu.activation_counts)


@dataclass
class CoupledResult:
    g_genome: ArchitectureGenome
    d_genome: ArchitectureGenome
    logs: list[dict]


def coupled_search(ctx: SearchContext, stage: str = "coupled") -> CoupledResult:
    """Baseline: evolve generator and discriminator populations together every round."""
    c = ctx.config
    rng = stream(c.seed, stage, "train")
    evo_rng = stream(c.seed, stage, "evolve")
    sg = init_supernet(ctx.g_space, GENERATOR, seed=stream_seed(c.seed, stage, "init-g"))
    sd = init_supernet(ctx.d_space, DISCRIMINATOR, seed=stream_seed(c.seed, stage, "init-d"))
    for _ in range(c.warmup_epochs):
        for real in ctx.batches(rng):
            gp = uniform_path_sample(ctx.g_space, GENERATOR, rng)
            dp = uniform_path_sample(ctx.d_space, DISCRIMINATOR, rng)
            gan_train_batch(ctx.pair(sg, gp, sd, dp), real, ctx.noise, rng)
    pop_g = [random_genome(ctx.g_space, GENERATOR, rng) for _ in range(c.P)]
    pop_d = [random_genome(ctx.d_space, DISCRIMINATOR, rng) for _ in range(c.P)]
    logs: list[dict] = []
    best = None
    for r in range(c.R):
        diverged = set()
        for _ in range(c.E):
            for real in ctx.batches(rng):
                i = int(rng.integers(c.P))
                res = gan_train_batch(ctx.pair(sg, pop_g[i], sd, pop_d[i]), real, ctx.noise, rng)
                if not res.finite:
                    diverged.add(i)
        objectives = ctx.evaluate([sg] * c.P, pop_g, stream_seed(c.seed, stage, "eval", r))
        objectives = [ObjectiveVector.collapsed_sentinel(o.size) if i in diverged else o for i, o in enumerate(objectives)]
        pop, parents = _rank_and_select(ctx, pop_g, objectives, stage, r)
        records = _round_records(stage, 0, r, GENERATOR, pop, parents, pop_d)
        for rec in records:
            ctx.sink.emit(stage, rec)
        logs.extend(records)
        best = parents[0]
        best_pair = (pop_g[best.id], pop_d[best.id])
        if r < c.R - 1:
            d_parents = [Individual(p.id, pop_d[p.id], p.objectives) for p in parents]
            pop_g = _evolve(ctx, ctx.g_space, parents, evo_rng)
            pop_d = _evolve(ctx, ctx.d_space, d_parents, evo_rng)
    ctx.sink.genome("coupled_g", best_pair[0], ctx.g_space)
    ctx.sink.genome("coupled_d", best_pair[1], ctx.d_space)
    return CoupledResult(best_pair[0], best_pair[1], logs)


@dataclass
class FullTrainReport:
    fid_like: float
    is_like: float
    inv_is: float
    size: int
    mode_coverage: int
    diverged: bool
    steps: int
    samples: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "fid_like": self.fid_like,
                "is_like": self.is_like,
                "inv_is": self.inv_is,
                "size": self.size,
                "mode_coverage": self.mode_coverage,
                "diverged": self.diverged,
                "steps": self.steps,
            }
        )


def full_train(
    ctx: SearchContext,
    g_genome: ArchitectureGenome,
    d_genome: ArchitectureGenome,
    epochs: int | None = None,
    n_samples: int | None = None,
    tag: str = "full-train",
) -> FullTrainReport:
    """Train the pair from a fresh initialisation and score a large sample draw."""
    c = ctx.config
    epochs = c.full_train_epochs if epochs is None else epochs
    n_samples = c.final_eval if n_samples is None else n_samples
    g = init_standalone(ctx.g_space, g_genome, seed=stream_seed(c.seed, tag, "init-g"))
    d = init_standalone(ctx.d_space, d_genome, seed=stream_seed(c.seed, tag, "init-d"))
    pair = ctx.pair(g, None, d, None)
    rng = stream(c.seed, tag, "train")
    steps = 0
    total = max(epochs * ctx.batches_per_epoch(), 1)
    diverged = False
    for _ in range(epochs):
        for real in ctx.batches(rng):
            if c.full_train_lr_decay == "linear":
                pair.adam_g.lr = pair.adam_d.lr = c.lr * (1.0 - steps / total)
            res = gan_train_batch(pair, real, ctx.noise, rng)
            steps += 1
            if not res.finite:
                diverged = True
                break
        if diverged:
            break
    size = param_count(g_genome, ctx.g_space)
    with np.errstate(all="ignore"):
        z = stream(c.seed, tag, "final-eval").standard_normal((n_samples, c.noise_dim))
        samples, _ = forward(g, None, z)
    if diverged or not np.all(np.isfinite(samples)):
        return FullTrainReport(float("inf"), 0.0, float("inf"), size, 0, True, steps, samples)
    fid = frechet_distance(gaussian_fit(samples), ctx.val_stats)
    score = is_like_score(samples, ctx.dist)
    cover = mode_coverage(samples, ctx.dist)
    return FullTrainReport(fid, score, 1.0 / score, size, cover, False, steps, samples)


# -- whole runs ------------------------------------------------------------

def resolve_genome(spec: str, space: SearchSpaceSpec) -> ArchitectureGenome:
    if spec == "default":
        return genome_from_ops(space, DEFAULT_D_CELL if space.role == DISCRIMINATOR else DEFAULT_G_CELL)
    if spec == "simple":
        return genome_from_ops(space, SIMPLE_D_CELL if space.role == DISCRIMINATOR else DEFAULT_G_CELL)
    return load_genome(spec, space)


@dataclass
class SearchOutcome:
    g_genome: ArchitectureGenome
    d_genome: ArchitectureGenome
    logs: dict[str, list[dict]]
    report: FullTrainReport | None
    stages: list = field(default_factory=list)


def run_search(config: SearchConfig, out_dir: str | Path | None = None, do_full_train: bool = True) -> SearchOutcome:
    sink = LogSink(out_dir, config.mode)
    ctx = SearchContext.build(config, sink)
    c = config
    stages: list = []
    if c.mode == "coupled":
        res = coupled_search(ctx)
        g_genome, d_genome = res.g_genome, res.d_genome
        stages.append(res)
    elif c.stage_order == "g_first":
        d_genome = resolve_genome(c.fixed_d_genome, ctx.d_space)
        fixed_d = init_standalone(ctx.d_space, d_genome, seed=stream_seed(c.seed, "fixed-d"))
        for cycle in range(c.cycles):
            s1 = stage1_search(ctx, fixed_d, "stage1", cycle)
            s2 = stage2_search(ctx, s1.alpha_star, s1.g_star, "stage2", cycle)
            stages += [s1, s2]
            g_genome, d_genome = s1.alpha_star, s2.beta_star
            fixed_d = s2.d_best
    else:
        g_genome = resolve_genome(c.fixed_g_genome, ctx.g_space)
        g_fixed = init_standalone(ctx.g_space, g_genome, seed=stream_seed(c.seed, "fixed-g"))
        for cycle in range(c.cycles):
            s2 = stage2_search(ctx, g_genome, g_fixed, "stage1", cycle)
            s1 = stage1_search(ctx, s2.d_best, "stage2", cycle)
            stages += [s2, s1]
            g_genome, d_genome = s1.alpha_star, s2.beta_star
            g_fixed = s1.g_star
    sink.genome("best_g", g_genome, ctx.g_space)
    sink.genome("best_d", d_genome, ctx.d_space)
    report = full_train(ctx, g_genome, d_genome) if do_full_train else None
    return SearchOutcome(g_genome, d_genome, sink.records, report, stages)
