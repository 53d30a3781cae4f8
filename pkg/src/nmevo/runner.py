"""Run orchestration: the generational loop and the auxiliary run types,
with all artifact plumbing (tables, manifest, checkpoints, champion file).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from . import __version__, checkpoint, genome
from . import config as configmod
from . import rng as rngmod
from .analysis import (
    CURVE_COLUMNS,
    FOCAL_COLUMNS,
    PROFILE_COLUMNS,
    TRAJECTORY_COLUMNS,
    CurveResult,
    Table,
    focal_report,
    learning_curve,
    smoothed_first_reach,
    trajectory_dump,
    write_curve_rows,
    write_trajectory_rows,
)
from .checkpoint import Checkpoint, CheckpointError, ResumeMismatch
from .config import RunConfig
from .evolution import (
    evaluate_population,
    generation_batch,
    initial_population,
    next_generation,
    parent_traces,
    selection_order,
)
from .genome import Genotype


@dataclass
class RunResult:
    out_dir: str
    last_generation: int  # next generation that would run
    champion: Genotype | None
    champion_path: str | None


def _manifest_append(path: str, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _checkpoint_path(ck_dir: str, gen: int) -> str:
    return os.path.join(ck_dir, f"checkpoint_{gen:06d}.bin")


def latest_checkpoint(ck_dir: str) -> str | None:
    if not os.path.isdir(ck_dir):
        return None
    names = sorted(n for n in os.listdir(ck_dir) if n.startswith("checkpoint_") and n.endswith(".bin"))
    return os.path.join(ck_dir, names[-1]) if names else None


def run_evolution(
    run_config: RunConfig,
    out_dir: str,
    threads: int = 1,
    stop_after: int | None = None,
    resume: bool = False,
) -> RunResult:
    """Drive the generational loop, emitting per-generation focal metrics,
    periodic checkpoints, and (on completion) the champion genotype. With
    stop_after=G the run halts cleanly before evaluating generation G, which
    a later resume continues bit-identically."""
    evo = run_config.evolution
    chash = configmod.config_hash(run_config)
    os.makedirs(out_dir, exist_ok=True)
    ck_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ck_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "run.manifest.jsonl")
    champion_path = os.path.join(out_dir, "champion.genotype.json")

    if resume:
        ck_path = latest_checkpoint(ck_dir)
        if ck_path is None:
            raise CheckpointError(f"no checkpoint found under {ck_dir}")
        ck = checkpoint.load(ck_path)
        if ck.config_hash != chash:
            raise ResumeMismatch(
                f"checkpoint config hash {ck.config_hash} does not match "
                f"current config {chash}; refusing to resume"
            )
        population = ck.population
        start_gen = ck.generation
        _manifest_append(manifest_path, {"event": "resume", "generation": start_gen,
                                         "checkpoint": ck_path})
    else:
        with open(os.path.join(out_dir, "config.ini"), "w", encoding="utf-8") as fh:
            fh.write(configmod.to_ini(run_config))
        population = initial_population(evo)
        start_gen = 0
        _manifest_append(manifest_path, {
            "event": "start",
            "config_hash": chash,
            "master_seed": evo.master_seed,
            "mode": evo.mode,
            "version": __version__,
        })

    end_gen = evo.generations if stop_after is None else min(stop_after, evo.generations)
    champion: Genotype | None = None

    focal_table = Table(os.path.join(out_dir, "focal.tsv"), FOCAL_COLUMNS,
                        chash, evo.master_seed, append=resume)
    profile_table = Table(os.path.join(out_dir, "focal_profile.tsv"), PROFILE_COLUMNS,
                          chash, evo.master_seed, append=resume)
    try:
        for gen in range(start_gen, end_gen):
            batch = generation_batch(evo, gen)
            results = evaluate_population(population, batch, gen, evo, threads)
            fitnesses = [r.fitness for r in results]
            order = selection_order(fitnesses)
            champion = population[int(order[0])]

            focal = focal_report(champion, evo, gen, threads)
            best = fitnesses[int(order[0])]
            mean = float(np.mean(fitnesses))
            focal_table.write_row(
                gen, best, mean,
                focal.regular_fitness, focal.nm_only_fitness, focal.rl_only_fitness,
                focal.rl_weight_change_l1, focal.nm_weight_change_l1,
            )
            for k in range(focal.profile.shape[0]):
                profile_table.write_row(gen, k, float(focal.profile[k]))
            focal_table.flush()
            profile_table.flush()
            _manifest_append(manifest_path, {
                "event": "generation",
                "generation": gen,
                "best_fitness": best,
                "mean_fitness": mean,
                "regular_fitness": focal.regular_fitness,
                "nm_only_fitness": focal.nm_only_fitness,
                "rl_only_fitness": focal.rl_only_fitness,
            })

            if gen + 1 < evo.generations:
                ranks = [int(i) for i in order[: evo.parent_pool]]
                traces = parent_traces(population, ranks, batch, gen, evo, threads)
                population = next_generation(population, fitnesses, traces, gen, evo, threads)

            if (gen + 1) % evo.checkpoint_every == 0 or gen + 1 == end_gen:
                path = _checkpoint_path(ck_dir, gen + 1)
                checkpoint.save(path, Checkpoint(
                    generation=gen + 1,
                    population=population,
                    config_hash=chash,
                    master_seed=evo.master_seed,
                    mode=evo.mode,
                ))
                _manifest_append(manifest_path, {"event": "checkpoint",
                                                 "generation": gen + 1, "path": path})
    finally:
        focal_table.close()
        profile_table.close()

    written_champion = None
    if end_gen == evo.generations and champion is not None:
        with open(champion_path, "w", encoding="utf-8") as fh:
            fh.write(genome.to_text(champion))
        written_champion = champion_path
        _manifest_append(manifest_path, {"event": "finish", "generations": evo.generations,
                                         "champion": champion_path})
    return RunResult(out_dir=out_dir, last_generation=end_gen,
                     champion=champion, champion_path=written_champion)


def baseline_genotype(run_config: RunConfig) -> Genotype:
    """The non-evolved reference learner: the initial two-branch architecture
    with the global RL rate switched fully on."""
    seed = run_config.evolution.master_seed
    g = genome.initial_genotype(rngmod.stream(seed, "baseline-init"))
    return replace(g, global_rl_rate=1.0)


def run_baseline(run_config: RunConfig, out_dir: str) -> CurveResult:
    """Pure-RL training curve over the configured trial budget."""
    evo = run_config.evolution
    os.makedirs(out_dir, exist_ok=True)
    curve = learning_curve(
        baseline_genotype(run_config),
        evo.master_seed,
        n_instances=run_config.baseline_instances,
        n_trials=run_config.baseline_trials,
        mode="rl_only",
        a2c_config=evo.a2c,
        t_trial=evo.t_trial,
        stream_tag="baseline",
    )
    chash = configmod.config_hash(run_config)
    with Table(os.path.join(out_dir, "baseline_curve.tsv"), CURVE_COLUMNS,
               chash, evo.master_seed) as table:
        write_curve_rows(table, "baseline-rl", curve)
    reach = smoothed_first_reach(curve.mean, 0.8, run_config.curve_window)
    _manifest_append(os.path.join(out_dir, "run.manifest.jsonl"), {
        "event": "baseline",
        "trials": run_config.baseline_trials,
        "instances": run_config.baseline_instances,
        "final_window_mean": float(np.mean(curve.mean[-min(run_config.curve_window, curve.mean.size):])),
        "first_trial_at_0.8": reach,
        "n_diverged": curve.n_diverged,
    })
    return curve


def run_compare(
    run_config: RunConfig,
    champion_paths: list[str],
    out_dir: str,
    n_trials: int,
    n_instances: int,
) -> tuple[dict[str, CurveResult], dict[str, str]]:
    """Learning curves for stored genotypes plus the pure-RL baseline on one
    shared instance set. Returns (curves by label, per-path error messages)."""
    evo = run_config.evolution
    os.makedirs(out_dir, exist_ok=True)
    agents: list[tuple[str, Genotype, str]] = []
    errors: dict[str, str] = {}
    for path in champion_paths:
        label = os.path.splitext(os.path.basename(path))[0]
        try:
            with open(path, encoding="utf-8") as fh:
                agents.append((label, genome.from_text(fh.read()), "full"))
        except (OSError, genome.GenotypeParseError) as exc:
            errors[path] = str(exc)
    agents.append(("baseline-rl", baseline_genotype(run_config), "rl_only"))

    curves: dict[str, CurveResult] = {}
    chash = configmod.config_hash(run_config)
    with Table(os.path.join(out_dir, "compare_curve.tsv"), CURVE_COLUMNS,
               chash, evo.master_seed) as table:
        for label, g, mode in agents:
            curve = learning_curve(
                g, evo.master_seed, n_instances=n_instances, n_trials=n_trials,
                mode=mode, a2c_config=evo.a2c, t_trial=evo.t_trial,
                stream_tag="compare",
            )
            curves[label] = curve
            write_curve_rows(table, label, curve)
    return curves, errors


def run_trajectory(run_config: RunConfig, genotype: Genotype, out_dir: str,
                   label: str = "trajectory") -> str:
    evo = run_config.evolution
    os.makedirs(out_dir, exist_ok=True)
    trace = trajectory_dump(
        genotype, evo.master_seed,
        n_instances=run_config.trajectory_instances, t_trial=evo.t_trial,
    )
    path = os.path.join(out_dir, f"{label}.tsv")
    with Table(path, TRAJECTORY_COLUMNS, configmod.config_hash(run_config),
               evo.master_seed) as table:
        write_trajectory_rows(table, trace)
    return path
