"""Shared helpers for the test suite."""

import numpy as np
import pytest

from nmevo import genome, rng as rngmod
from nmevo.genome import (
    ACTION_COL,
    HIDDEN_COLS,
    INPUT_COL,
    VALUE_COL,
    ActivatoryProjection,
    Genotype,
)


def make_projection(pre, post, rng, scale=0.5):
    w = rng.uniform(-scale, scale, (genome.column_size(post), genome.column_size(pre)))
    b = rng.uniform(-scale, scale, genome.column_size(post))
    return ActivatoryProjection(pre=pre, post=post, weights=w, bias=b, local_rl_rate=1.0)


def make_genotype(seed=0, global_rate=0.0, edges=None, scale=0.5):
    """A genotype over the given edges (default: the two-branch start)."""
    rng = rngmod.stream(seed, "test-genotype")
    if edges is None:
        edges = [
            (INPUT_COL, HIDDEN_COLS[0]),
            (HIDDEN_COLS[0], ACTION_COL),
            (INPUT_COL, HIDDEN_COLS[1]),
            (HIDDEN_COLS[1], VALUE_COL),
        ]
    acts = tuple(make_projection(pre, post, rng, scale) for pre, post in edges)
    return Genotype(activatory=acts, modulatory=(), global_rl_rate=global_rate)


def make_modulated_genotype(seed=0, global_rate=0.0, column=INPUT_COL,
                            target=(HIDDEN_COLS[0], ACTION_COL), priority=0.0):
    """Two-branch genotype plus one modulatory projection."""
    g = make_genotype(seed, global_rate)
    rng = rngmod.stream(seed, "test-modulatory")
    q = genome.new_modulatory(column, target[0], target[1], rng, priority)
    return Genotype(activatory=g.activatory, modulatory=(q,), global_rl_rate=global_rate)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
