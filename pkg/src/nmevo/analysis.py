"""Measurement suite: ablation reports, learning curves, trajectory dumps.

The focal individual is the unmutated champion of the evaluated generation,
re-evaluated on a dedicated fresh batch (streams named "focal-env" and
"focal-policy") so the numbers are unbiased by selection. Three evaluations
run on identical instances and identical policy noise: all mechanisms on,
RL only, and NM only; weight-change accounting comes from the all-on run.

All emitted tables are tab-separated text with a comment preamble carrying
the config hash and master seed, then a header row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import genome, task
from . import rng as rngmod
from .evolution import EvolutionConfig, _parallel_map
from .genome import Genotype
from .lifetime import LifetimeResult, draw_instance_batch, evaluate_lifetime
from .network import Phenotype


@dataclass
class FocalReport:
    generation: int
    regular_fitness: float
    nm_only_fitness: float
    rl_only_fitness: float
    rl_weight_change_l1: float  # summed over the lifetime, mean over instances
    nm_weight_change_l1: float
    profile: np.ndarray  # (n_trials,) mean reward per trial index, all-on run


def focal_batch(config: EvolutionConfig, gen: int):
    rngs = [
        rngmod.stream(config.master_seed, "focal-env", gen, h)
        for h in range(config.n_instances)
    ]
    return draw_instance_batch(rngs, config.n_trials)


def focal_report(
    genotype: Genotype, config: EvolutionConfig, gen: int, threads: int = 1
) -> FocalReport:
    batch = focal_batch(config, gen)

    def job(mode: str) -> LifetimeResult:
        return evaluate_lifetime(
            genotype,
            batch,
            rngmod.stream(config.master_seed, "focal-policy", gen),
            mode=mode,
            a2c_config=config.a2c,
            t_trial=config.t_trial,
        )

    regular, rl_only, nm_only = _parallel_map(job, ["full", "rl_only", "nm_only"], threads)
    return FocalReport(
        generation=gen,
        regular_fitness=regular.fitness,
        nm_only_fitness=nm_only.fitness,
        rl_only_fitness=rl_only.fitness,
        rl_weight_change_l1=float(regular.rl_weight_change_l1.mean()),
        nm_weight_change_l1=float(regular.nm_weight_change_l1.mean()),
        profile=regular.trial_rewards.mean(axis=1),
    )


@dataclass
class CurveResult:
    mean: np.ndarray  # (n_trials,) mean reward per trial across instances
    lo: np.ndarray  # min across instances
    hi: np.ndarray  # max across instances
    n_diverged: int


def learning_curve(
    genotype: Genotype,
    master_seed: int,
    n_instances: int,
    n_trials: int,
    mode: str = "full",
    a2c_config=None,
    t_trial: int = task.T_TRIAL,
    stream_tag: str = "curve",
) -> CurveResult:
    """Fresh-instance evaluation reported per trial index with a min/max
    envelope across instances."""
    rngs = [
        rngmod.stream(master_seed, f"{stream_tag}-env", h) for h in range(n_instances)
    ]
    batch = draw_instance_batch(rngs, n_trials)
    result = evaluate_lifetime(
        genotype,
        batch,
        rngmod.stream(master_seed, f"{stream_tag}-policy"),
        mode=mode,
        a2c_config=a2c_config,
        t_trial=t_trial,
    )
    r = result.trial_rewards
    return CurveResult(
        mean=r.mean(axis=1), lo=r.min(axis=1), hi=r.max(axis=1),
        n_diverged=result.n_diverged,
    )


@dataclass
class TrajectoryTrace:
    """First-trial rollouts on a fixed instance set."""

    agent_pos: np.ndarray  # (t_trial, H, 2), position after each step's move
    action_mean: np.ndarray  # (t_trial, H, 2)
    action_sd: np.ndarray  # (t_trial, H, 2)
    target_pos: np.ndarray  # (H, 2)
    rotations: np.ndarray  # (H,)


def trajectory_dump(
    genotype: Genotype,
    master_seed: int,
    n_instances: int = 8,
    t_trial: int = task.T_TRIAL,
    mode: str = "full",
) -> TrajectoryTrace:
    """Record every step of the first trial on each of a named-seed instance
    set: positions and the action distribution the policy produced."""
    rngs = [
        rngmod.stream(master_seed, "trajectory-env", h) for h in range(n_instances)
    ]
    batch = draw_instance_batch(rngs, 1)
    policy_rng = rngmod.stream(master_seed, "trajectory-policy")
    H = n_instances

    phen = Phenotype(genotype, H)
    use_nm = mode != "rl_only" and phen.has_nm
    rot = np.stack([task.rotation_matrix(a) for a in batch.rotations])
    target = np.stack(
        [np.cos(batch.target_angles[0]), np.sin(batch.target_angles[0])], axis=1
    )
    agent = np.zeros((H, 2))
    prev_rel = np.zeros((H, 2))
    prev_act = np.zeros((H, 2))
    pos = np.zeros((t_trial, H, 2))
    means = np.zeros((t_trial, H, 2))
    sds = np.zeros((t_trial, H, 2))

    for t in range(t_trial):
        cur_rel = np.einsum("hij,hj->hi", rot, target - agent)
        obs = np.concatenate([cur_rel, prev_rel, prev_act], axis=1)
        mean, sd, _ = phen.forward(obs)
        raw = mean + sd * policy_rng.standard_normal((H, 2))
        if use_nm:
            phen.nm_step()
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        clipped = raw / np.maximum(norms, 1.0)
        agent = agent + clipped / t_trial
        prev_rel = cur_rel
        prev_act = clipped
        pos[t] = agent
        means[t] = mean
        sds[t] = sd

    return TrajectoryTrace(
        agent_pos=pos,
        action_mean=means,
        action_sd=sds,
        target_pos=target,
        rotations=batch.rotations,
    )


# ---------------------------------------------------------------------------
# Tabular output


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class Table:
    """Tab-separated table with a self-describing preamble. Appending to an
    existing file skips the preamble so resumed runs keep extending it."""

    def __init__(self, path, columns, config_hash: str, master_seed: int, append: bool = False):
        self.path = path
        self.columns = tuple(columns)
        mode = "a" if append else "w"
        self._fh = open(path, mode, encoding="utf-8")
        if not append:
            self._fh.write(f"# config_hash={config_hash}\n")
            self._fh.write(f"# master_seed={master_seed}\n")
            self._fh.write("\t".join(self.columns) + "\n")
            self._fh.flush()

    def write_row(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self._fh.write("\t".join(_fmt(v) for v in values) + "\n")

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


FOCAL_COLUMNS = (
    "generation",
    "best_fitness",
    "mean_fitness",
    "regular_fitness",
    "nm_only_fitness",
    "rl_only_fitness",
    "rl_weight_change_l1",
    "nm_weight_change_l1",
)

PROFILE_COLUMNS = ("generation", "trial", "mean_reward")

CURVE_COLUMNS = ("series", "trial", "mean_reward", "min_reward", "max_reward")

TRAJECTORY_COLUMNS = (
    "instance",
    "step",
    "agent_x",
    "agent_y",
    "mean_x",
    "mean_y",
    "sd_x",
    "sd_y",
    "target_x",
    "target_y",
)


def write_curve_rows(table: Table, series: str, curve: CurveResult) -> None:
    for k in range(curve.mean.shape[0]):
        table.write_row(series, k, curve.mean[k], curve.lo[k], curve.hi[k])


def write_trajectory_rows(table: Table, trace: TrajectoryTrace) -> None:
    t_trial, H, _ = trace.agent_pos.shape
    for h in range(H):
        for t in range(t_trial):
            table.write_row(
                h,
                t,
                trace.agent_pos[t, h, 0],
                trace.agent_pos[t, h, 1],
                trace.action_mean[t, h, 0],
                trace.action_mean[t, h, 1],
                trace.action_sd[t, h, 0],
                trace.action_sd[t, h, 1],
                trace.target_pos[h, 0],
                trace.target_pos[h, 1],
            )


def smoothed_first_reach(curve_mean: np.ndarray, threshold: float, window: int) -> int | None:
    """First trial index (1-based, window end) where the trailing-window mean
    reaches the threshold, or None."""
    if curve_mean.size == 0:
        return None
    w = max(1, min(window, curve_mean.size))
    csum = np.concatenate([[0.0], np.cumsum(curve_mean)])
    for end in range(w, curve_mean.size + 1):
        if (csum[end] - csum[end - w]) / w >= threshold:
            return end
    return None
