"""Executable network instances: batched forward pass and neuromodulation.

A Phenotype holds live weight copies for a batch of task instances evaluated
in lockstep, so one phenotype column h corresponds to one task instance. All
weight arrays are (H, post_size, pre_size); activations are (H, column_size).
Weight changes go through a single bottleneck (`_apply_weight_delta`) that
attributes the L1 magnitude of every change to either the RL or the
neuromodulation mechanism.
"""

from __future__ import annotations

import numpy as np

from . import genome
from .genome import ACTION_COL, INPUT_COL, VALUE_COL, Genotype

SD_CLAMP_LO = -10.0
SD_CLAMP_HI = 4.0


def squash_unit(x):
    """Map raw MLP output to [0, 1]: add 0.5, clamp."""
    return np.clip(x + 0.5, 0.0, 1.0)


def action_head(pre):
    """Action-column activation: units 0-1 are means (identity), units 2-3
    are standard deviations, exp of the clamped pre-activation."""
    out = np.array(pre, dtype=np.float64, copy=True)
    out[..., 2:] = np.exp(np.clip(pre[..., 2:], SD_CLAMP_LO, SD_CLAMP_HI))
    return out


def column_output(col: int, pre: np.ndarray) -> np.ndarray:
    kind = genome.COLUMN_ACTIVATIONS[col]
    if kind == "tanh":
        return np.tanh(pre)
    if kind == "identity":
        return np.array(pre, dtype=np.float64, copy=True)
    return action_head(pre)


class Phenotype:
    """Live network state for H task instances of one genotype."""

    def __init__(self, genotype: Genotype, n_instances: int):
        self.genotype = genotype
        self.graph = genome.active_graph(genotype)
        self.n_instances = n_instances
        H = n_instances

        # Live weights for active projections only; inactive projections never
        # run and never change, so their innate values stand.
        self.weights: dict[int, np.ndarray] = {}
        self.biases: dict[int, np.ndarray] = {}
        self.local_rates: dict[int, float] = {}
        for e in self.graph.activatory:
            p = genotype.activatory[e]
            self.weights[e] = np.repeat(p.weights[None, :, :], H, axis=0)
            self.biases[e] = np.repeat(p.bias[None, :], H, axis=0)
            self.local_rates[e] = p.local_rl_rate

        # Forward-pass plan: for each active non-input column in dependency
        # order, the incoming active projections feeding it.
        incoming: dict[int, list[tuple[int, int]]] = {}
        for e in self.graph.activatory:
            p = genotype.activatory[e]
            incoming.setdefault(p.post, []).append((e, p.pre))
        self._plan = [
            (col, tuple(incoming.get(col, ())))
            for col in self.graph.topo_order
            if col != INPUT_COL
        ]

        # Neuromodulation plan: active modulatory projections in ascending
        # priority, genotype order breaking ties (sorted() is stable).
        self.nm_order: tuple[int, ...] = tuple(
            sorted(self.graph.modulatory, key=lambda k: genotype.modulatory[k].priority)
        )
        self._nm_plan = []
        for k in self.nm_order:
            q = genotype.modulatory[k]
            e = genotype.projection_index(q.target_pre, q.target_post)
            n_target = genome.target_weight_count(q.target_pre, q.target_post)
            self._nm_plan.append((q, e, n_target))

        self.activations: dict[int, np.ndarray] = {}
        self.sd_grad_mask = np.ones((H, 2), dtype=bool)
        self.rl_weight_change_l1 = np.zeros(H)
        self.nm_weight_change_l1 = np.zeros(H)
        # Instances stay live until the caller marks them diverged; weight
        # updates only ever apply to live instances.
        self.live = np.ones(H, dtype=bool)
        self.delta_spy = None  # optional callback(e_idx, delta, mechanism)

    @property
    def has_nm(self) -> bool:
        return len(self._nm_plan) > 0

    def forward(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Run one step for all instances. obs is (H, 6). Returns action
        means (H, 2), action SDs (H, 2) and value estimates (H,). Activations
        of all active columns are cached for neuromodulation, tracing and
        gradient computation."""
        H = self.n_instances
        acts = {INPUT_COL: np.asarray(obs, dtype=np.float64)}
        for col, sources in self._plan:
            pre = np.zeros((H, genome.column_size(col)))
            for e, src in sources:
                pre += np.einsum("hoi,hi->ho", self.weights[e], acts[src])
                pre += self.biases[e]
            if col == ACTION_COL:
                sd_pre = pre[:, 2:]
                self.sd_grad_mask = (sd_pre > SD_CLAMP_LO) & (sd_pre < SD_CLAMP_HI)
            acts[col] = column_output(col, pre)
        self.activations = acts

        if ACTION_COL in acts:
            out = acts[ACTION_COL]
            mean, sd = out[:, :2], out[:, 2:]
        else:
            mean = np.zeros((H, 2))
            sd = np.ones((H, 2))
            self.sd_grad_mask = np.ones((H, 2), dtype=bool)
        if VALUE_COL in acts:
            value = acts[VALUE_COL][:, 0]
        else:
            value = np.zeros(H)
        return mean, sd, value

    def nm_step(self) -> np.ndarray:
        """Apply every active modulatory projection once, in priority order,
        using the activations cached by the current step's forward pass.
        Returns this step's summed |weight delta| per instance."""
        H = self.n_instances
        before = self.nm_weight_change_l1.copy()
        for q, e, n_target in self._nm_plan:
            a_m = self.activations[q.column]
            hid = np.tanh(a_m @ q.fm_w1.T)
            raw = hid @ q.fm_w2.T
            w = self.weights[e]
            w_hat = raw[:, :n_target].reshape(w.shape)
            beta = squash_unit(raw[:, n_target:]).reshape(w.shape)

            gate_in = np.concatenate(
                [self.activations[q.target_pre], self.activations[q.target_post]], axis=1
            )
            eta = squash_unit(np.tanh(gate_in @ q.fg_w1.T) @ q.fg_w2.T)  # (H, 1)

            delta = eta.reshape(H, 1, 1) * beta * (w_hat - w)
            self._apply_weight_delta(e, delta, "nm")
        return self.nm_weight_change_l1 - before

    def _apply_weight_delta(self, e: int, delta: np.ndarray, mechanism: str) -> None:
        """Single write path for all weight changes; dead instances frozen."""
        if not self.live.all():
            delta = np.where(self.live[:, None, None], delta, 0.0)
        self.weights[e] += delta
        l1 = np.abs(delta).sum(axis=(1, 2))
        if mechanism == "rl":
            self.rl_weight_change_l1 += l1
        else:
            self.nm_weight_change_l1 += l1
        if self.delta_spy is not None:
            self.delta_spy(e, delta, mechanism)

    def _apply_bias_delta(self, e: int, delta: np.ndarray) -> None:
        """Bias write path; only the RL update moves biases."""
        if not self.live.all():
            delta = np.where(self.live[:, None], delta, 0.0)
        self.biases[e] += delta
        self.rl_weight_change_l1 += np.abs(delta).sum(axis=1)
        if self.delta_spy is not None:
            self.delta_spy(e, delta, "rl")

    def snapshot_weights(self) -> dict[int, np.ndarray]:
        return {e: w.copy() for e, w in self.weights.items()}

    def final_weights(self) -> dict[int, np.ndarray]:
        """Per-instance weight matrices for every genotype projection,
        active or not (inactive ones report their innate values)."""
        out = {}
        for k, p in enumerate(self.genotype.activatory):
            if k in self.weights:
                out[k] = self.weights[k].copy()
            else:
                out[k] = np.repeat(p.weights[None, :, :], self.n_instances, axis=0)
        return out

    def final_biases(self) -> dict[int, np.ndarray]:
        """Per-instance bias vectors for every genotype projection."""
        out = {}
        for k, p in enumerate(self.genotype.activatory):
            if k in self.biases:
                out[k] = self.biases[k].copy()
            else:
                out[k] = np.repeat(p.bias[None, :], self.n_instances, axis=0)
        return out
