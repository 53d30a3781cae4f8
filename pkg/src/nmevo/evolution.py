"""Generational loop pieces: population evaluation, selection, mutation.

Reproduction is mutation-only. Every stochastic decision for offspring slot s
of generation g comes from the named stream ("mutate", g, s), and every
lifetime evaluation of individual i uses ("policy", g, i) against the shared
instance batch drawn from ("env", g, h). Results are merged in index order,
so the population trajectory depends only on (master seed, config), never on
how many workers ran the evaluations.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import genome, rng as rngmod, task
from .a2c import A2CConfig
from .genome import (
    ACTION_COL,
    HIDDEN_COLS,
    INPUT_COL,
    VALUE_COL,
    ActivatoryProjection,
    Genotype,
    ModulatoryProjection,
)
from .guided import (
    GuidedSettings,
    guided_activatory,
    guided_modulatory,
    trace_covers,
)
from .lifetime import (
    InstanceBatch,
    LearningTrace,
    LifetimeResult,
    draw_instance_batch,
    evaluate_lifetime,
)

WEIGHT_NOISE_MAG_LO = 1e-3
WEIGHT_NOISE_MAG_HI = 1.0
INIT_WEIGHT_LO = -0.5
INIT_WEIGHT_HI = 0.5


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 100
    generations: int = 1500
    parent_pool: int = 25
    elite_pool: int = 5
    n_instances: int = 64
    n_trials: int = 50
    t_trial: int = 10
    mode: str = "full"
    master_seed: int = 0
    p_insert_activatory: float = 0.05
    p_delete_activatory: float = 0.05
    p_insert_modulatory: float = 0.05
    p_delete_modulatory: float = 0.05
    p_weight_mutation: float = 0.2
    p_guided_weight: float = 0.5
    p_rl_rate_mutation: float = 0.2
    global_rate_noise: float = 0.05
    local_rate_noise: float = 0.2
    p_priority_mutation: float = 0.1
    priority_noise: float = 0.5
    structural_retries: int = 10
    checkpoint_every: int = 50
    guided: GuidedSettings = field(default_factory=GuidedSettings)
    a2c: A2CConfig = field(default_factory=A2CConfig)

    def __post_init__(self):
        if self.parent_pool > self.population_size:
            raise ValueError("parent_pool exceeds population_size")
        if self.elite_pool > self.parent_pool:
            raise ValueError("elite_pool exceeds parent_pool")
        if self.guided.n_train >= self.n_instances:
            raise ValueError("guided n_train must leave validation instances")
        if self.a2c.update_interval != self.t_trial:
            raise ValueError("A2C update interval must equal the trial length")


def initial_population(config: EvolutionConfig) -> list[Genotype]:
    return [
        genome.initial_genotype(rngmod.stream(config.master_seed, "init", i))
        for i in range(config.population_size)
    ]


def generation_batch(config: EvolutionConfig, gen: int) -> InstanceBatch:
    rngs = [
        rngmod.stream(config.master_seed, "env", gen, h)
        for h in range(config.n_instances)
    ]
    return draw_instance_batch(rngs, config.n_trials)


def _parallel_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def evaluate_population(
    population: list[Genotype],
    batch: InstanceBatch,
    gen: int,
    config: EvolutionConfig,
    threads: int = 1,
) -> list[LifetimeResult]:
    def job(i: int) -> LifetimeResult:
        return evaluate_lifetime(
            population[i],
            batch,
            rngmod.stream(config.master_seed, "policy", gen, i),
            mode=config.mode,
            a2c_config=config.a2c,
            t_trial=config.t_trial,
        )

    return _parallel_map(job, list(range(len(population))), threads)


def parent_traces(
    population: list[Genotype],
    ranks: list[int],
    batch: InstanceBatch,
    gen: int,
    config: EvolutionConfig,
    threads: int = 1,
) -> list[LearningTrace]:
    """Re-run the parents' evaluations with trace recording on. The streams
    are keyed by the original population index, so the re-run reproduces the
    selection run exactly and only parents ever pay the trace memory."""

    def job(i: int) -> LearningTrace:
        return evaluate_lifetime(
            population[i],
            batch,
            rngmod.stream(config.master_seed, "policy", gen, i),
            mode=config.mode,
            a2c_config=config.a2c,
            record_trace=True,
            t_trial=config.t_trial,
        ).trace

    return _parallel_map(job, list(ranks), threads)


def selection_order(fitnesses) -> np.ndarray:
    """Indices by descending fitness; ties keep population order."""
    return np.argsort(-np.asarray(fitnesses, dtype=np.float64), kind="stable")


# ---------------------------------------------------------------------------
# Mutation operators


def perturb_subset(arrays: list[np.ndarray], rng: np.random.Generator) -> list[np.ndarray]:
    """Uniform noise of random magnitude on a random subset of the entries
    of the given arrays (treated as one flat parameter vector)."""
    sizes = [a.size for a in arrays]
    total = int(sum(sizes))
    mag = float(np.exp(rng.uniform(np.log(WEIGHT_NOISE_MAG_LO), np.log(WEIGHT_NOISE_MAG_HI))))
    frac = 1.0 - rng.uniform(0.0, 1.0)  # (0, 1]
    k = max(1, int(round(frac * total)))
    idx = rng.choice(total, size=k, replace=False)
    flat = np.concatenate([a.ravel() for a in arrays])
    flat[idx] += rng.uniform(-mag, mag, size=k)
    out = []
    start = 0
    for a, size in zip(arrays, sizes):
        out.append(flat[start:start + size].reshape(a.shape))
        start += size
    return out


def _try_insert_activatory(
    acts: list[ActivatoryProjection], rng: np.random.Generator, retries: int
) -> ActivatoryProjection | None:
    edges = [(p.pre, p.post) for p in acts]
    pre_pool = (INPUT_COL, *HIDDEN_COLS)
    post_pool = (*HIDDEN_COLS, ACTION_COL, VALUE_COL)
    for _ in range(retries):
        pre = pre_pool[rng.integers(len(pre_pool))]
        post = post_pool[rng.integers(len(post_pool))]
        if pre == post or (pre, post) in edges or genome.creates_cycle(edges, pre, post):
            continue
        w = rng.uniform(INIT_WEIGHT_LO, INIT_WEIGHT_HI, (genome.column_size(post), genome.column_size(pre)))
        b = rng.uniform(INIT_WEIGHT_LO, INIT_WEIGHT_HI, genome.column_size(post))
        return ActivatoryProjection(pre=pre, post=post, weights=w, bias=b, local_rl_rate=1.0)
    return None


def _eligible_modulating_columns(graph, mode: str) -> list[int]:
    if mode == "bottlenecked_nm":
        pool = (VALUE_COL,)
    else:
        pool = (INPUT_COL, *HIDDEN_COLS)
    return [c for c in pool if c in graph.columns]


def mutate(
    genotype: Genotype,
    trace: LearningTrace | None,
    rng: np.random.Generator,
    config: EvolutionConfig,
) -> Genotype:
    """One offspring: structural edits, weight noise (half guided when the
    parent trace covers the projection), RL-rate and priority perturbation.
    Operators run in a fixed order so the stream usage is reproducible."""
    acts = list(genotype.activatory)
    mods = list(genotype.modulatory)
    global_rate = genotype.global_rl_rate
    mode = config.mode

    # (a) structural edits to the activatory graph
    if rng.uniform() < config.p_insert_activatory:
        inserted = _try_insert_activatory(acts, rng, config.structural_retries)
        if inserted is not None:
            acts.append(inserted)
    if rng.uniform() < config.p_delete_activatory and acts:
        gone = acts.pop(int(rng.integers(len(acts))))
        mods = [q for q in mods if q.target != (gone.pre, gone.post)]

    # (b) structural edits to modulation (never in rl_only runs)
    if mode != "rl_only":
        if rng.uniform() < config.p_insert_modulatory:
            graph = genome.active_graph(Genotype(tuple(acts), tuple(mods), global_rate))
            columns = _eligible_modulating_columns(graph, mode)
            targets = list(graph.activatory)
            if columns and targets:
                col = columns[int(rng.integers(len(columns)))]
                target = acts[targets[int(rng.integers(len(targets)))]]
                priority = rng.uniform(0.0, 1.0)
                q = genome.new_modulatory(
                    col, target.pre, target.post, rng, priority,
                    INIT_WEIGHT_LO, INIT_WEIGHT_HI,
                )
                if trace is not None and trace_covers(trace, q):
                    q, _ = guided_modulatory(q, trace, config.guided, rng)
                mods.append(q)
        if rng.uniform() < config.p_delete_modulatory and mods:
            mods.pop(int(rng.integers(len(mods))))

    # (c) activatory weight noise, half guided
    for k in range(len(acts)):
        if rng.uniform() < config.p_weight_mutation:
            p = acts[k]
            use_guided = rng.uniform() < config.p_guided_weight
            if use_guided and trace is not None and (p.pre, p.post) in trace.final_weights:
                acts[k] = guided_activatory(
                    p,
                    trace.final_weights[(p.pre, p.post)],
                    trace.final_biases[(p.pre, p.post)],
                    rng,
                )
            else:
                w, b = perturb_subset([p.weights, p.bias], rng)
                acts[k] = replace(p, weights=w, bias=b)

    # (d) modulatory parameter noise, half guided
    for k in range(len(mods)):
        if rng.uniform() < config.p_weight_mutation:
            q = mods[k]
            use_guided = rng.uniform() < config.p_guided_weight
            if use_guided and trace is not None and trace_covers(trace, q):
                mods[k], _ = guided_modulatory(q, trace, config.guided, rng)
            else:
                fm1, fm2, fg1, fg2 = perturb_subset(
                    [q.fm_w1, q.fm_w2, q.fg_w1, q.fg_w2], rng
                )
                mods[k] = replace(q, fm_w1=fm1, fm_w2=fm2, fg_w1=fg1, fg_w2=fg2)

    # (e) RL learning rates (frozen in nm_only runs)
    if mode != "nm_only":
        if rng.uniform() < config.p_rl_rate_mutation:
            global_rate = max(0.0, global_rate + rng.uniform(-config.global_rate_noise, config.global_rate_noise))
        for k in range(len(acts)):
            if rng.uniform() < config.p_rl_rate_mutation:
                rate = max(0.0, acts[k].local_rl_rate + rng.uniform(-config.local_rate_noise, config.local_rate_noise))
                acts[k] = replace(acts[k], local_rl_rate=rate)

    # (f) priority genes
    for k in range(len(mods)):
        if rng.uniform() < config.p_priority_mutation:
            pr = mods[k].priority + rng.uniform(-config.priority_noise, config.priority_noise)
            mods[k] = replace(mods[k], priority=pr)

    child = Genotype(tuple(acts), tuple(mods), global_rate)
    genome.validate(child, bottlenecked=(mode == "bottlenecked_nm"))
    return child


def next_generation(
    population: list[Genotype],
    fitnesses,
    traces: list[LearningTrace],
    gen: int,
    config: EvolutionConfig,
    threads: int = 1,
) -> list[Genotype]:
    """Elites copied unchanged into the first slots, every other slot filled
    by mutating a parent drawn uniformly from the parent pool. `traces` is
    indexed by parent rank (0 = fittest)."""
    order = selection_order(fitnesses)
    parents = [population[i] for i in order[: config.parent_pool]]
    elites = parents[: config.elite_pool]

    def job(slot: int) -> Genotype:
        rng = rngmod.stream(config.master_seed, "mutate", gen, slot)
        pick = int(rng.integers(config.parent_pool))
        return mutate(parents[pick], traces[pick], rng, config)

    slots = list(range(config.elite_pool, config.population_size))
    offspring = _parallel_map(job, slots, threads)
    return list(elites) + offspring
