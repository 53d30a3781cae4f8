"""Lifetime evaluation: one genotype learning across a batch of instances.

All instances of a lifetime run in lockstep through the phenotype's batch
dimension, which keeps the hot loop vectorized. Per-instance divergence
(non-finite actions, or a non-finite RL loss or gradient) kills only that
instance: it scores -1 for the current and all remaining trials, its weights
freeze, and the policy noise stream keeps advancing so surviving instances
are unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import genome, task
from .a2c import (
    A2CConfig,
    OptimizerState,
    RolloutBuffer,
    a2c_backward,
    a2c_loss,
    apply_rl_update,
    compute_returns,
    gaussian_entropy,
    gaussian_logp,
)
from .genome import Genotype
from .network import Phenotype

MODES = ("full", "rl_only", "nm_only", "bottlenecked_nm")


@dataclass(frozen=True)
class InstanceBatch:
    """Rotation angle per instance plus one target direction per trial."""

    rotations: np.ndarray  # (H,)
    target_angles: np.ndarray  # (n_trials, H)

    @property
    def n_instances(self) -> int:
        return self.rotations.shape[0]

    @property
    def n_trials(self) -> int:
        return self.target_angles.shape[0]


def draw_instance_batch(rngs, n_trials: int) -> InstanceBatch:
    """One independent stream per instance: the rotation angle is drawn
    first, then one target angle per trial, matching the draw order of
    task.create_instance followed by task.begin_trial."""
    H = len(rngs)
    rotations = np.zeros(H)
    angles = np.zeros((n_trials, H))
    for h, rng in enumerate(rngs):
        rotations[h] = rng.uniform(0.0, 2.0 * np.pi)
        for k in range(n_trials):
            angles[k, h] = rng.uniform(0.0, 2.0 * np.pi)
    return InstanceBatch(rotations=rotations, target_angles=angles)


@dataclass
class LearningTrace:
    """What guided mutation operators need from a parent's lifetime."""

    activations: dict[int, np.ndarray]  # column -> (T, H, size) float32
    innate_weights: dict[tuple[int, int], np.ndarray]  # (pre, post) -> (out, in)
    final_weights: dict[tuple[int, int], np.ndarray]  # (pre, post) -> (H, out, in)
    innate_biases: dict[tuple[int, int], np.ndarray]  # (pre, post) -> (out,)
    final_biases: dict[tuple[int, int], np.ndarray]  # (pre, post) -> (H, out)
    r_last5: np.ndarray  # (H,) mean reward over the last five trials

    @property
    def n_instances(self) -> int:
        return self.r_last5.shape[0]

    @property
    def n_steps(self) -> int:
        return next(iter(self.activations.values())).shape[0]


@dataclass
class LifetimeResult:
    fitness: float
    trial_rewards: np.ndarray  # (n_trials, H)
    rl_weight_change_l1: np.ndarray  # (H,)
    nm_weight_change_l1: np.ndarray  # (H,)
    n_diverged: int
    trace: LearningTrace | None = None


def evaluate_lifetime(
    genotype: Genotype,
    batch: InstanceBatch,
    policy_rng: np.random.Generator,
    mode: str = "full",
    a2c_config: A2CConfig | None = None,
    record_trace: bool = False,
    t_trial: int = task.T_TRIAL,
) -> LifetimeResult:
    """Run n_trials trials on each instance, learning as the mode allows:
    rl_only skips neuromodulation steps, nm_only skips RL updates. Returns
    fitness = mean reward over all trials and instances."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    cfg = a2c_config or A2CConfig()
    H = batch.n_instances
    n_trials = batch.n_trials

    phen = Phenotype(genotype, H)
    use_nm = mode != "rl_only" and phen.has_nm
    # With a zero global rate every RL weight delta is exactly zero, and with
    # no active projections there is nothing to train, so the whole update
    # pipeline can be skipped without changing any outcome.
    use_rl = (mode != "nm_only" and genotype.global_rl_rate != 0.0
              and len(phen.weights) > 0)
    buffer = RolloutBuffer(t_trial, phen) if use_rl else None
    optimizer = OptimizerState(phen) if use_rl else None

    rot = np.stack([task.rotation_matrix(a) for a in batch.rotations])  # (H, 2, 2)
    rewards = np.full((n_trials, H), -1.0)

    trace_acts = None
    if record_trace:
        T = n_trials * t_trial
        trace_acts = {
            col: np.zeros((T, H, genome.column_size(col)), dtype=np.float32)
            for col in phen.graph.columns
        }
    step = 0

    for k in range(n_trials):
        agent = np.zeros((H, 2))
        prev_rel = np.zeros((H, 2))
        prev_act = np.zeros((H, 2))
        target = np.stack(
            [np.cos(batch.target_angles[k]), np.sin(batch.target_angles[k])], axis=1
        )
        if use_rl:
            buffer.reset()

        for _ in range(t_trial):
            cur_rel = np.einsum("hij,hj->hi", rot, target - agent)
            obs = np.concatenate([cur_rel, prev_rel, prev_act], axis=1)
            mean, sd, value = phen.forward(obs)
            noise = policy_rng.standard_normal((H, 2))
            raw = mean + sd * noise
            if use_rl:
                logp = gaussian_logp(raw, mean, sd)
                ent = gaussian_entropy(sd)
                buffer.add(phen, raw, mean, sd, logp, ent, value)
            if trace_acts is not None:
                for col, arr in trace_acts.items():
                    arr[step] = phen.activations[col]
            if use_nm:
                phen.nm_step()

            # The environment transition rejects non-finite actions: mark
            # those instances diverged, then move only the live ones.
            bad = ~np.all(np.isfinite(raw), axis=1)
            if bad.any():
                phen.live &= ~bad
            live = phen.live[:, None]
            norms = np.linalg.norm(raw, axis=1, keepdims=True)
            clipped = raw / np.maximum(norms, 1.0)
            agent = np.where(live, agent + clipped / t_trial, agent)
            prev_rel = np.where(live, cur_rel, prev_rel)
            prev_act = np.where(live, clipped, prev_act)
            step += 1

        r = 1.0 - np.linalg.norm(target - agent, axis=1)
        rewards[k, phen.live] = r[phen.live]

        if use_rl:
            buffer.set_reward(np.where(phen.live, r, 0.0))
            buffer.terminal = True
            returns = compute_returns(buffer.reward, cfg.gamma)
            grads = a2c_backward(phen, buffer, returns, cfg)
            ok = np.isfinite(a2c_loss(buffer, returns, cfg)) & grads.finite_mask()
            phen.live &= ok
            if not phen.live.all():
                grads.zero_instances(~phen.live)
            apply_rl_update(phen, grads, optimizer, cfg, genotype.global_rl_rate)

    trace = None
    if record_trace:
        final_w = phen.final_weights()
        final_b = phen.final_biases()
        trace = LearningTrace(
            activations=trace_acts,
            innate_weights={
                (p.pre, p.post): p.weights.copy() for p in genotype.activatory
            },
            final_weights={
                (p.pre, p.post): final_w[k] for k, p in enumerate(genotype.activatory)
            },
            innate_biases={
                (p.pre, p.post): p.bias.copy() for p in genotype.activatory
            },
            final_biases={
                (p.pre, p.post): final_b[k] for k, p in enumerate(genotype.activatory)
            },
            r_last5=rewards[-min(5, n_trials):].mean(axis=0),
        )
    # A diverged instance's counters can hold the non-finite delta that killed
    # it; report zero activity for dead instances so aggregate means stay
    # finite.
    return LifetimeResult(
        fitness=float(rewards.mean()),
        trial_rewards=rewards,
        rl_weight_change_l1=np.where(phen.live, phen.rl_weight_change_l1, 0.0),
        nm_weight_change_l1=np.where(phen.live, phen.nm_weight_change_l1, 0.0),
        n_diverged=int(H - phen.live.sum()),
        trace=trace,
    )
