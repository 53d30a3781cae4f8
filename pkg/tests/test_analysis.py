"""Focal reports, learning curves, trajectory dumps, and table output."""

from dataclasses import replace

import numpy as np
import pytest

from conftest import make_genotype, make_modulated_genotype

from nmevo import genome, rng as rngmod
from nmevo.analysis import (
    CURVE_COLUMNS,
    FOCAL_COLUMNS,
    TRAJECTORY_COLUMNS,
    CurveResult,
    Table,
    focal_batch,
    focal_report,
    learning_curve,
    smoothed_first_reach,
    trajectory_dump,
    write_curve_rows,
    write_trajectory_rows,
)
from nmevo.evolution import EvolutionConfig
from nmevo.genome import Genotype
from nmevo.guided import GuidedSettings
from nmevo.lifetime import evaluate_lifetime
from nmevo.network import Phenotype


def small_config(**kw):
    base = dict(
        population_size=4,
        parent_pool=2,
        elite_pool=1,
        n_instances=6,
        n_trials=3,
        master_seed=5,
        guided=GuidedSettings(n_train=4),
    )
    base.update(kw)
    return EvolutionConfig(**base)


# ---------------------------------------------------------------------------
# focal report


def test_focal_report_coherence_with_stripped_genotypes():
    cfg = small_config()
    g = make_modulated_genotype(seed=91, global_rate=0.7)
    report = focal_report(g, cfg, gen=2)

    no_nm = Genotype(activatory=g.activatory, modulatory=(),
                     global_rl_rate=g.global_rl_rate)
    assert report.rl_only_fitness == focal_report(no_nm, cfg, gen=2).regular_fitness

    no_rl = Genotype(activatory=g.activatory, modulatory=g.modulatory,
                     global_rl_rate=0.0)
    assert report.nm_only_fitness == focal_report(no_rl, cfg, gen=2).regular_fitness


def test_focal_report_degenerate_equalities():
    cfg = small_config()
    inert = make_genotype(seed=92, global_rate=0.0)
    rep = focal_report(inert, cfg, gen=0)
    assert rep.regular_fitness == rep.nm_only_fitness == rep.rl_only_fitness

    rl_champion = make_genotype(seed=92, global_rate=1.0)
    rep_rl = focal_report(rl_champion, cfg, gen=0)
    assert rep_rl.regular_fitness == rep_rl.rl_only_fitness
    assert rep_rl.regular_fitness != rep_rl.nm_only_fitness

    nm_champion = make_modulated_genotype(seed=92, global_rate=0.0)
    rep_nm = focal_report(nm_champion, cfg, gen=0)
    assert rep_nm.regular_fitness == rep_nm.nm_only_fitness


def test_focal_report_profile_consistency():
    cfg = small_config()
    g = make_modulated_genotype(seed=93, global_rate=0.5)
    rep = focal_report(g, cfg, gen=1)
    assert rep.profile.shape == (cfg.n_trials,)
    assert rep.profile.mean() == pytest.approx(rep.regular_fitness, abs=1e-12)


def test_focal_report_thread_invariance():
    cfg = small_config()
    g = make_modulated_genotype(seed=94, global_rate=0.3)
    a = focal_report(g, cfg, gen=3, threads=1)
    b = focal_report(g, cfg, gen=3, threads=3)
    assert (a.regular_fitness, a.nm_only_fitness, a.rl_only_fitness) == \
        (b.regular_fitness, b.nm_only_fitness, b.rl_only_fitness)
    np.testing.assert_array_equal(a.profile, b.profile)


def test_focal_batch_distinct_from_selection_batch():
    cfg = small_config()
    from nmevo.evolution import generation_batch
    sel = generation_batch(cfg, 4)
    foc = focal_batch(cfg, 4)
    assert not np.array_equal(sel.rotations, foc.rotations)


def test_accounting_completeness_over_a_lifetime(monkeypatch):
    """Every weight write is attributed to exactly one mechanism: the spied
    per-write deltas sum to the reported counters bit for bit."""
    sums = {"rl": None, "nm": None}
    orig_init = Phenotype.__init__

    def patched(self, genotype, n_instances):
        orig_init(self, genotype, n_instances)

        def spy(e, delta, mech):
            axes = tuple(range(1, delta.ndim))
            l1 = np.abs(delta).sum(axis=axes)
            sums[mech] = l1 if sums[mech] is None else sums[mech] + l1

        self.delta_spy = spy

    monkeypatch.setattr(Phenotype, "__init__", patched)
    g = make_modulated_genotype(seed=95, global_rate=0.8)
    from nmevo.lifetime import draw_instance_batch
    batch = draw_instance_batch([rngmod.stream(95, "env", h) for h in range(3)], 4)
    res = evaluate_lifetime(g, batch, rngmod.stream(95, "policy"))
    assert res.n_diverged == 0
    np.testing.assert_array_equal(res.rl_weight_change_l1, sums["rl"])
    np.testing.assert_array_equal(res.nm_weight_change_l1, sums["nm"])
    assert np.all(sums["rl"] > 0.0) and np.all(sums["nm"] > 0.0)


# ---------------------------------------------------------------------------
# learning curves


def test_learning_curve_deterministic_and_tagged():
    g = make_genotype(seed=96, global_rate=1.0)
    a = learning_curve(g, 7, n_instances=4, n_trials=3)
    b = learning_curve(g, 7, n_instances=4, n_trials=3)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.lo, b.lo)
    np.testing.assert_array_equal(a.hi, b.hi)
    c = learning_curve(g, 7, n_instances=4, n_trials=3, stream_tag="compare")
    assert not np.array_equal(a.mean, c.mean)
    assert np.all(a.lo <= a.mean) and np.all(a.mean <= a.hi)
    assert a.n_diverged == 0


def test_learning_curve_flat_for_inert_genotype():
    g = make_genotype(seed=97, global_rate=0.0)
    curve = learning_curve(g, 97, n_instances=32, n_trials=50)
    slope = np.polyfit(np.arange(50), curve.mean, 1)[0]
    assert abs(slope) < 0.02


# ---------------------------------------------------------------------------
# trajectory dumps


def test_trajectory_dump_zero_weight_genotype():
    g = make_genotype(seed=98)
    zeroed = Genotype(
        activatory=tuple(
            replace(p, weights=np.zeros_like(p.weights), bias=np.zeros_like(p.bias))
            for p in g.activatory
        ),
        modulatory=(),
    )
    trace = trajectory_dump(zeroed, 98, n_instances=5)
    assert trace.agent_pos.shape == (10, 5, 2)
    np.testing.assert_array_equal(trace.action_sd, np.ones((10, 5, 2)))
    np.testing.assert_array_equal(trace.action_mean, np.zeros((10, 5, 2)))
    steps = np.diff(np.concatenate([np.zeros((1, 5, 2)), trace.agent_pos]), axis=0)
    assert np.all(np.linalg.norm(steps, axis=2) <= 0.1 + 1e-12)
    np.testing.assert_allclose(np.linalg.norm(trace.target_pos, axis=1), 1.0,
                               atol=1e-12)


def test_trajectory_dump_bit_identical_replay():
    g = make_modulated_genotype(seed=99)
    a = trajectory_dump(g, 99)
    b = trajectory_dump(g, 99)
    np.testing.assert_array_equal(a.agent_pos, b.agent_pos)
    np.testing.assert_array_equal(a.action_mean, b.action_mean)
    np.testing.assert_array_equal(a.action_sd, b.action_sd)
    np.testing.assert_array_equal(a.rotations, b.rotations)
    c = trajectory_dump(g, 100)
    assert not np.array_equal(a.agent_pos, c.agent_pos)


# ---------------------------------------------------------------------------
# tables


def test_table_preamble_and_rows(tmp_path):
    path = tmp_path / "t.tsv"
    with Table(path, ("a", "b"), "cafe0123", 42) as t:
        t.write_row(1, 0.5)
        t.write_row(2, float(np.float64(0.1) + np.float64(0.2)))
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash=cafe0123"
    assert lines[1] == "# master_seed=42"
    assert lines[2] == "a\tb"
    assert lines[3] == "1\t0.5"
    # repr round-trips the double exactly
    assert float(lines[4].split("\t")[1]) == np.float64(0.1) + np.float64(0.2)


def test_table_append_skips_preamble(tmp_path):
    path = tmp_path / "t.tsv"
    with Table(path, ("a",), "h", 0) as t:
        t.write_row(1)
    with Table(path, ("a",), "h", 0, append=True) as t:
        t.write_row(2)
    lines = path.read_text().splitlines()
    assert lines[3:] == ["1", "2"]
    assert lines.count("# master_seed=0") == 1


def test_table_width_mismatch_raises(tmp_path):
    with Table(tmp_path / "t.tsv", ("a", "b"), "h", 0) as t:
        with pytest.raises(ValueError):
            t.write_row(1)


def test_write_curve_and_trajectory_rows(tmp_path):
    curve = CurveResult(mean=np.array([0.1, 0.2]), lo=np.array([0.0, 0.1]),
                        hi=np.array([0.3, 0.4]), n_diverged=0)
    path = tmp_path / "c.tsv"
    with Table(path, CURVE_COLUMNS, "h", 0) as t:
        write_curve_rows(t, "champion", curve)
    lines = path.read_text().splitlines()
    assert len(lines) == 3 + 2
    assert lines[3].split("\t") == ["champion", "0", "0.1", "0.0", "0.3"]

    g = make_genotype(seed=101)
    trace = trajectory_dump(g, 101, n_instances=3)
    path2 = tmp_path / "traj.tsv"
    with Table(path2, TRAJECTORY_COLUMNS, "h", 0) as t:
        write_trajectory_rows(t, trace)
    rows = path2.read_text().splitlines()[3:]
    assert len(rows) == 3 * 10
    first = rows[0].split("\t")
    assert first[0] == "0" and first[1] == "0"
    assert float(first[2]) == trace.agent_pos[0, 0, 0]


def test_column_sets():
    assert FOCAL_COLUMNS[0] == "generation"
    assert "rl_weight_change_l1" in FOCAL_COLUMNS
    assert CURVE_COLUMNS == ("series", "trial", "mean_reward", "min_reward", "max_reward")


# ---------------------------------------------------------------------------
# smoothed threshold crossing


def test_smoothed_first_reach_cases():
    assert smoothed_first_reach(np.array([]), 0.5, 10) is None
    assert smoothed_first_reach(np.array([0.0, 0.6, 0.4]), 0.5, 1) == 2
    assert smoothed_first_reach(np.array([0.0, 0.0, 1.0, 1.0]), 0.5, 2) == 3
    assert smoothed_first_reach(np.array([0.4, 0.4, 0.4]), 0.5, 2) is None
    # window longer than the series clamps to the series length
    assert smoothed_first_reach(np.array([1.0, 1.0]), 0.9, 100) == 2
    assert smoothed_first_reach(np.ones(5), 1.0, 3) == 3
