"""Lifetime evaluation: batched trials, learning modes, divergence handling."""

from dataclasses import replace

import numpy as np
import pytest

from conftest import make_genotype, make_modulated_genotype

from nmevo import rng as rngmod, task
from nmevo.genome import ACTION_COL, HIDDEN_COLS, INPUT_COL, VALUE_COL, Genotype
from nmevo.lifetime import (
    MODES,
    InstanceBatch,
    draw_instance_batch,
    evaluate_lifetime,
)
from nmevo.network import Phenotype


def test_draw_instance_batch_matches_task_draw_order():
    streams = [rngmod.stream(3, "env", h) for h in range(4)]
    batch = draw_instance_batch(streams, n_trials=3)
    for h in range(4):
        r = rngmod.stream(3, "env", h)
        inst = task.create_instance(r)
        assert batch.rotations[h] == inst.rotation_angle
        for k in range(3):
            state = task.begin_trial(inst, r)
            expected = np.array([np.cos(batch.target_angles[k, h]),
                                 np.sin(batch.target_angles[k, h])])
            np.testing.assert_array_equal(state.target_pos, expected)


def test_unknown_mode_rejected():
    batch = draw_instance_batch([rngmod.stream(0, "env", 0)], 1)
    with pytest.raises(ValueError):
        evaluate_lifetime(make_genotype(), batch, rngmod.stream(0, "policy"), mode="sgd")
    assert MODES == ("full", "rl_only", "nm_only", "bottlenecked_nm")


def test_single_instance_matches_task_module_loop():
    """The vectorized environment math must agree with the scalar task
    functions bit for bit when driven by the same streams."""
    g = make_genotype(seed=41)
    n_trials = 4
    batch = draw_instance_batch([rngmod.stream(41, "env", 0)], n_trials)
    res = evaluate_lifetime(g, batch, rngmod.stream(41, "policy"), mode="full")

    env_rng = rngmod.stream(41, "env", 0)
    pol_rng = rngmod.stream(41, "policy")
    inst = task.create_instance(env_rng)
    phen = Phenotype(g, 1)
    for k in range(n_trials):
        state = task.begin_trial(inst, env_rng)
        prev_rel = np.zeros(2)
        prev_act = np.zeros(2)
        for _ in range(task.T_TRIAL):
            obs = task.observe(state, inst, prev_rel, prev_act)
            mean, sd, _ = phen.forward(obs.vector()[None, :])
            noise = pol_rng.standard_normal((1, 2))
            raw = (mean + sd * noise)[0]
            task.apply_action(state, raw)
            prev_rel = obs.current_rel
            prev_act = task.clip_to_unit_circle(raw)
        # The scalar task helpers compute vector norms through a different
        # numpy path than the batched evaluator, so agreement is to rounding.
        assert res.trial_rewards[k, 0] == pytest.approx(task.trial_reward(state), abs=1e-12)
    assert res.fitness == res.trial_rewards.mean()
    assert res.n_diverged == 0


def test_lifetime_is_deterministic_per_stream():
    g = make_modulated_genotype(seed=42, global_rate=1.0)
    batch = draw_instance_batch([rngmod.stream(42, "env", h) for h in range(3)], 5)
    a = evaluate_lifetime(g, batch, rngmod.stream(42, "policy"))
    b = evaluate_lifetime(g, batch, rngmod.stream(42, "policy"))
    np.testing.assert_array_equal(a.trial_rewards, b.trial_rewards)
    np.testing.assert_array_equal(a.rl_weight_change_l1, b.rl_weight_change_l1)
    np.testing.assert_array_equal(a.nm_weight_change_l1, b.nm_weight_change_l1)
    c = evaluate_lifetime(g, batch, rngmod.stream(43, "policy"))
    assert not np.array_equal(a.trial_rewards, c.trial_rewards)


def test_nm_only_equals_full_when_global_rate_is_zero():
    g = make_modulated_genotype(seed=44, global_rate=0.0)
    batch = draw_instance_batch([rngmod.stream(44, "env", h) for h in range(3)], 6)
    full = evaluate_lifetime(g, batch, rngmod.stream(44, "policy"), mode="full")
    nm = evaluate_lifetime(g, batch, rngmod.stream(44, "policy"), mode="nm_only")
    np.testing.assert_array_equal(full.trial_rewards, nm.trial_rewards)
    np.testing.assert_array_equal(full.nm_weight_change_l1, nm.nm_weight_change_l1)
    np.testing.assert_array_equal(full.rl_weight_change_l1, np.zeros(3))


def test_rl_only_disables_modulation():
    g = make_modulated_genotype(seed=45, global_rate=1.0)
    batch = draw_instance_batch([rngmod.stream(45, "env", h) for h in range(3)], 6)
    rl = evaluate_lifetime(g, batch, rngmod.stream(45, "policy"), mode="rl_only")
    np.testing.assert_array_equal(rl.nm_weight_change_l1, np.zeros(3))
    assert np.all(rl.rl_weight_change_l1 > 0.0)
    full = evaluate_lifetime(g, batch, rngmod.stream(45, "policy"), mode="full")
    assert np.all(full.nm_weight_change_l1 > 0.0)
    assert not np.array_equal(rl.trial_rewards, full.trial_rewards)


def test_nm_only_disables_rl():
    g = make_modulated_genotype(seed=46, global_rate=1.0)
    batch = draw_instance_batch([rngmod.stream(46, "env", h) for h in range(2)], 4)
    nm = evaluate_lifetime(g, batch, rngmod.stream(46, "policy"), mode="nm_only")
    np.testing.assert_array_equal(nm.rl_weight_change_l1, np.zeros(2))
    assert np.all(nm.nm_weight_change_l1 > 0.0)


def test_action_divergence_scores_minus_one_everywhere():
    # A modulatory projection with overflowing target weights drives the
    # policy weights non-finite at the first update; the resulting non-finite
    # actions kill both instances in trial 1.
    g = make_modulated_genotype(seed=47, global_rate=0.0)
    q = g.modulatory[0]
    q = replace(q, fm_w1=np.full_like(q.fm_w1, 1000.0),
                fm_w2=np.full_like(q.fm_w2, 1e308))
    g = Genotype(activatory=g.activatory, modulatory=(q,), global_rl_rate=0.0)
    batch = draw_instance_batch([rngmod.stream(47, "env", h) for h in range(2)], 3)
    with np.errstate(over="ignore", invalid="ignore"):
        res = evaluate_lifetime(g, batch, rngmod.stream(47, "policy"))
    np.testing.assert_array_equal(res.trial_rewards, np.full((3, 2), -1.0))
    assert res.n_diverged == 2
    assert res.fitness == -1.0
    # Counters of dead instances are reported as zero activity, never nan.
    np.testing.assert_array_equal(res.nm_weight_change_l1, np.zeros(2))
    np.testing.assert_array_equal(res.rl_weight_change_l1, np.zeros(2))


def test_rl_divergence_keeps_current_trial_then_freezes():
    # A sane action branch with an exploding value branch: the first trial's
    # reward is real, the non-finite loss then kills the learner and every
    # later trial scores -1.
    g = make_genotype(seed=48)
    acts = list(g.activatory)
    acts[3] = replace(acts[3], weights=np.full_like(acts[3].weights, 1e200))
    g = Genotype(activatory=tuple(acts), modulatory=(), global_rl_rate=1.0)
    batch = draw_instance_batch([rngmod.stream(48, "env", h) for h in range(2)], 3)
    with np.errstate(over="ignore", invalid="ignore"):
        res = evaluate_lifetime(g, batch, rngmod.stream(48, "policy"))
    assert np.all(res.trial_rewards[0] > -1.0)
    np.testing.assert_array_equal(res.trial_rewards[1:], np.full((2, 2), -1.0))
    assert res.n_diverged == 2


def test_trace_records_activations_and_endpoints():
    g = make_modulated_genotype(seed=49, global_rate=1.0)
    H, n_trials = 3, 7
    batch = draw_instance_batch([rngmod.stream(49, "env", h) for h in range(H)], n_trials)
    res = evaluate_lifetime(g, batch, rngmod.stream(49, "policy"), record_trace=True)
    trace = res.trace
    assert trace is not None and trace.n_instances == H
    assert trace.n_steps == n_trials * task.T_TRIAL

    for col, arr in trace.activations.items():
        assert arr.dtype == np.float32
        assert arr.shape[:2] == (n_trials * task.T_TRIAL, H)
    assert INPUT_COL in trace.activations and ACTION_COL in trace.activations

    for p in g.activatory:
        key = (p.pre, p.post)
        np.testing.assert_array_equal(trace.innate_weights[key], p.weights)
        np.testing.assert_array_equal(trace.innate_biases[key], p.bias)
        assert trace.final_weights[key].shape == (H,) + p.weights.shape
        assert trace.final_biases[key].shape == (H,) + p.bias.shape
    # Learning happened, so final differs from innate on the modulated edge.
    tkey = g.modulatory[0].target
    assert not np.allclose(trace.final_weights[tkey],
                           np.broadcast_to(g.activatory[1].weights, (H, 4, 8)))
    np.testing.assert_allclose(
        trace.r_last5, res.trial_rewards[-5:].mean(axis=0), atol=1e-12)


def test_trace_final_equals_innate_without_learning():
    g = make_genotype(seed=50, global_rate=0.0)
    batch = draw_instance_batch([rngmod.stream(50, "env", h) for h in range(2)], 6)
    res = evaluate_lifetime(g, batch, rngmod.stream(50, "policy"), record_trace=True)
    for p in g.activatory:
        key = (p.pre, p.post)
        for h in range(2):
            np.testing.assert_array_equal(res.trace.final_weights[key][h], p.weights)
            np.testing.assert_array_equal(res.trace.final_biases[key][h], p.bias)


def test_full_equals_rl_only_without_modulatory_projections():
    """Mode handling must not consume randomness differently when the
    genotype has no modulatory projections to run."""
    g = make_genotype(seed=51, global_rate=1.0)
    batch = draw_instance_batch([rngmod.stream(51, "env", h) for h in range(2)], 5)
    full = evaluate_lifetime(g, batch, rngmod.stream(51, "policy"), mode="full")
    rl = evaluate_lifetime(g, batch, rngmod.stream(51, "policy"), mode="rl_only")
    np.testing.assert_array_equal(full.trial_rewards, rl.trial_rewards)
    np.testing.assert_array_equal(full.rl_weight_change_l1, rl.rl_weight_change_l1)


def test_explicit_instance_batch_shapes():
    batch = InstanceBatch(rotations=np.zeros(3), target_angles=np.zeros((7, 3)))
    assert batch.n_instances == 3
    assert batch.n_trials == 7


def test_empty_and_dangling_genotypes_run_as_pure_noise_policies():
    """Structural mutation can prune a genotype down to nothing reachable;
    such individuals must still evaluate (as an untrained unit-noise policy),
    including under a nonzero global RL rate."""
    empty = Genotype(activatory=(), modulatory=(), global_rl_rate=1.0)
    dangling = Genotype(
        activatory=(make_genotype(seed=52).activatory[0],),  # input -> hidden only
        modulatory=(),
        global_rl_rate=1.0,
    )
    for g in (empty, dangling):
        batch = draw_instance_batch([rngmod.stream(52, "env", h) for h in range(2)], 3)
        res = evaluate_lifetime(g, batch, rngmod.stream(52, "policy"))
        assert res.trial_rewards.shape == (3, 2)
        assert np.all(np.isfinite(res.trial_rewards))
        assert res.n_diverged == 0
        np.testing.assert_array_equal(res.rl_weight_change_l1, np.zeros(2))
