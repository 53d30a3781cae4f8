"""Advantage actor-critic implemented directly over the phenotype.

One update per trial: the rollout buffer spans exactly the trial's steps,
returns are discounted sums with no terminal bootstrap, and gradients are
computed by reverse-mode accumulation through the active graph. Weights can
change during a trial (neuromodulation runs every step), so the buffer keeps
per-step weight snapshots and the backward pass uses the weights that were
live at each step.

Everything is batched over the H task instances of a phenotype; each instance
is an independent learner, so gradient-norm clipping and the RMSProp state
are per instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import genome
from .genome import ACTION_COL, INPUT_COL, VALUE_COL
from .network import Phenotype

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class A2CConfig:
    gamma: float = 0.99
    learning_rate: float = 7e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    rms_alpha: float = 0.99
    rms_epsilon: float = 1e-5
    update_interval: int = 10


def gaussian_logp(raw: np.ndarray, mean: np.ndarray, sd: np.ndarray) -> np.ndarray:
    """Sum over action components of the Gaussian log-density at raw."""
    z = (raw - mean) / sd
    return np.sum(-0.5 * z * z - np.log(sd) - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(sd: np.ndarray) -> np.ndarray:
    return np.sum(np.log(sd) + 0.5 * (LOG_2PI + 1.0), axis=-1)


def sample_action(mean: np.ndarray, sd: np.ndarray, rng: np.random.Generator):
    """Draw a raw action componentwise; returns (raw, log_density, entropy)."""
    raw = mean + sd * rng.standard_normal(np.shape(mean))
    return raw, gaussian_logp(raw, mean, sd), gaussian_entropy(sd)


def compute_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted returns along axis 0, no bootstrap past the final step."""
    returns = np.zeros_like(rewards, dtype=np.float64)
    acc = np.zeros_like(rewards[-1], dtype=np.float64)
    for t in range(rewards.shape[0] - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        returns[t] = acc
    return returns


class RolloutBuffer:
    """Per-trial storage for one phenotype's batch of instances."""

    def __init__(self, n_steps: int, phenotype: Phenotype):
        H = phenotype.n_instances
        self.n_steps = n_steps
        self.t = 0
        self.obs = np.zeros((n_steps, H, genome.INPUT_SIZE))
        self.raw = np.zeros((n_steps, H, 2))
        self.mean = np.zeros((n_steps, H, 2))
        self.sd = np.ones((n_steps, H, 2))
        self.sd_mask = np.ones((n_steps, H, 2), dtype=bool)
        self.logp = np.zeros((n_steps, H))
        self.entropy = np.zeros((n_steps, H))
        self.value = np.zeros((n_steps, H))
        self.reward = np.zeros((n_steps, H))
        self.terminal = False
        self.acts = {
            col: np.zeros((n_steps, H, genome.column_size(col)))
            for col in phenotype.graph.columns
        }
        # Weight snapshots are only needed when weights move within a trial.
        self.track_weights = phenotype.has_nm
        self.weight_hist: dict[int, np.ndarray] | None
        if self.track_weights:
            self.weight_hist = {
                e: np.zeros((n_steps,) + w.shape) for e, w in phenotype.weights.items()
            }
        else:
            self.weight_hist = None

    def add(self, phenotype: Phenotype, raw, mean, sd, logp, entropy, value) -> None:
        t = self.t
        self.obs[t] = phenotype.activations[INPUT_COL]
        self.raw[t] = raw
        self.mean[t] = mean
        self.sd[t] = sd
        self.sd_mask[t] = phenotype.sd_grad_mask
        self.logp[t] = logp
        self.entropy[t] = entropy
        self.value[t] = value
        for col, arr in self.acts.items():
            arr[t] = phenotype.activations[col]
        if self.track_weights:
            for e, w in phenotype.weights.items():
                self.weight_hist[e][t] = w
        self.t += 1

    def set_reward(self, reward: np.ndarray) -> None:
        self.reward[self.t - 1] = reward

    def full(self) -> bool:
        return self.t == self.n_steps

    def reset(self) -> None:
        self.t = 0
        self.terminal = False


def a2c_loss(buffer: RolloutBuffer, returns: np.ndarray, config: A2CConfig) -> np.ndarray:
    """Per-instance scalar loss over the buffered trial."""
    adv = returns - buffer.value
    policy = -(adv * buffer.logp).sum(axis=0)
    value = config.value_coef * ((returns - buffer.value) ** 2).sum(axis=0)
    ent = config.entropy_coef * buffer.entropy.sum(axis=0)
    return policy + value - ent


class Gradients:
    """Loss gradients for the weight matrices and biases of active projections."""

    def __init__(self, w: dict[int, np.ndarray], b: dict[int, np.ndarray]):
        self.w = w
        self.b = b

    def arrays(self):
        yield from self.w.values()
        yield from self.b.values()

    def finite_mask(self) -> np.ndarray:
        """Per-instance flag: every gradient entry of that instance is finite."""
        ok = None
        for g in self.arrays():
            f = np.all(np.isfinite(g), axis=tuple(range(1, g.ndim)))
            ok = f if ok is None else ok & f
        return ok if ok is not None else np.ones(0, dtype=bool)

    def zero_instances(self, mask: np.ndarray) -> None:
        for g in self.arrays():
            g[mask] = 0.0


def a2c_backward(
    phenotype: Phenotype,
    buffer: RolloutBuffer,
    returns: np.ndarray,
    config: A2CConfig,
) -> Gradients:
    """Gradients of the trial loss with respect to every active activatory
    weight matrix and bias, shaped like phenotype.weights / phenotype.biases.
    Advantages are treated as constants in the policy term; the value residual
    propagates through the value head."""
    H = phenotype.n_instances
    graph = phenotype.graph
    geno = phenotype.genotype
    grads = Gradients(
        {e: np.zeros_like(w) for e, w in phenotype.weights.items()},
        {e: np.zeros_like(b) for e, b in phenotype.biases.items()},
    )

    incoming: dict[int, list[tuple[int, int]]] = {}
    for e in graph.activatory:
        p = geno.activatory[e]
        incoming.setdefault(p.post, []).append((e, p.pre))
    rev_cols = [c for c in reversed(graph.topo_order) if c != INPUT_COL]

    adv = returns - buffer.value  # (T, H), detached in the policy term

    for t in range(buffer.n_steps):
        d_out = {col: np.zeros((H, genome.column_size(col))) for col in graph.columns}

        if ACTION_COL in d_out:
            mean, sd, raw = buffer.mean[t], buffer.sd[t], buffer.raw[t]
            z = (raw - mean) / sd
            a = adv[t][:, None]
            d_mean = -a * z / sd
            d_sd = -a * (z * z - 1.0) / sd - config.entropy_coef / sd
            d_out[ACTION_COL][:, :2] = d_mean
            d_out[ACTION_COL][:, 2:] = d_sd
        if VALUE_COL in d_out:
            d_out[VALUE_COL][:, 0] = -2.0 * config.value_coef * (returns[t] - buffer.value[t])

        for col in rev_cols:
            g = d_out[col]
            kind = genome.COLUMN_ACTIVATIONS[col]
            if kind == "tanh":
                a_col = buffer.acts[col][t]
                g_pre = g * (1.0 - a_col * a_col)
            elif kind == "action_head":
                g_pre = g.copy()
                g_pre[:, 2:] *= buffer.sd[t] * buffer.sd_mask[t]
            else:
                g_pre = g
            for e, src in incoming.get(col, ()):
                a_src = buffer.acts[src][t]
                w_t = buffer.weight_hist[e][t] if buffer.track_weights else phenotype.weights[e]
                grads.w[e] += np.einsum("ho,hi->hoi", g_pre, a_src)
                grads.b[e] += g_pre
                if src != INPUT_COL:
                    d_out[src] += np.einsum("ho,hoi->hi", g_pre, w_t)
    return grads


class OptimizerState:
    """Per-parameter RMSProp mean-square accumulators, one per instance."""

    def __init__(self, phenotype: Phenotype):
        self.v = {e: np.zeros_like(w) for e, w in phenotype.weights.items()}
        self.vb = {e: np.zeros_like(b) for e, b in phenotype.biases.items()}


def clip_global_norm(grads: Gradients, max_norm: float) -> np.ndarray:
    """Scale each instance's full gradient set to global norm <= max_norm,
    in place. Returns the pre-clip norms."""
    sq = None
    for g in grads.arrays():
        s = (g * g).sum(axis=tuple(range(1, g.ndim)))
        sq = s if sq is None else sq + s
    if sq is None:
        return np.zeros(0)
    norm = np.sqrt(sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(norm > max_norm, max_norm / norm, 1.0)
    coef = np.where(np.isfinite(coef), coef, 1.0)
    for g in grads.arrays():
        g *= coef.reshape((-1,) + (1,) * (g.ndim - 1))
    return norm


def apply_rl_update(
    phenotype: Phenotype,
    grads: Gradients,
    optimizer: OptimizerState,
    config: A2CConfig,
    global_rate: float,
) -> None:
    """Clip, take an RMSProp step, scale by global and local RL rates."""
    clip_global_norm(grads, config.max_grad_norm)
    for e, g in grads.w.items():
        v = optimizer.v[e]
        v *= config.rms_alpha
        v += (1.0 - config.rms_alpha) * g * g
        step = -config.learning_rate * g / (np.sqrt(v) + config.rms_epsilon)
        step *= global_rate * phenotype.local_rates[e]
        phenotype._apply_weight_delta(e, step, "rl")
    for e, g in grads.b.items():
        vb = optimizer.vb[e]
        vb *= config.rms_alpha
        vb += (1.0 - config.rms_alpha) * g * g
        step = -config.learning_rate * g / (np.sqrt(vb) + config.rms_epsilon)
        step *= global_rate * phenotype.local_rates[e]
        phenotype._apply_bias_delta(e, step)
