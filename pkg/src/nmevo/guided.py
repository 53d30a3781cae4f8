"""Trace-informed mutation operators.

Two operators use the parent's learning trace instead of blind noise: the
activatory one pulls a weight matrix toward the across-instance mean of the
weights the parent had learned by the end of its lifetime; the modulatory one
fits a modulatory projection's two MLPs so that, replayed open-loop over the
parent's recorded activations, the projection reproduces the parent's learned
weights. The replay loss is minimized by signSGD with a step size that grows
1.1x when the training loss falls and halves when it rises, with early
stopping on held-out instances.

The replay is differentiated exactly in reverse mode: the only recurrence is
w[t] = w[t-1] + c[t] * (what[t] - w[t-1]) with c[t] independent of w, so the
adjoint is G[t] = direct[t] + G[t+1] * (1 - c[t+1]). Clamped units get zero
gradient outside the open interval of their active range.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import genome, network
from .genome import ModulatoryProjection
from .lifetime import LearningTrace
from .network import column_output, squash_unit

PARAM_NAMES = ("fm_w1", "fm_w2", "fg_w1", "fg_w2")


@dataclass(frozen=True)
class GuidedSettings:
    tau: float = 1e-5
    n_train: int = 48  # trace instances used for training; the rest validate
    stall_patience: int = 10
    max_epochs: int = 500
    initial_step: float = 0.01
    tau_outside: bool = False  # sum the update-rate penalty outside the per-instance weighting


@dataclass
class GuidedLossReport:
    train_losses: list[float]
    val_losses: list[float]
    epochs_run: int
    stalled: bool
    accepted: bool


def instance_scale(r_last5: np.ndarray) -> np.ndarray:
    """Per-instance weighting s(r) = (r - min)/(max - min); all-equal rewards
    degenerate to s = 1 everywhere."""
    lo = float(r_last5.min())
    hi = float(r_last5.max())
    if hi == lo:
        return np.ones_like(r_last5)
    return (r_last5 - lo) / (hi - lo)


def guided_activatory(
    proj,
    final_weights: np.ndarray,
    final_biases: np.ndarray,
    rng: np.random.Generator,
):
    """Shift toward the mean of the parent's learned end-of-lifetime
    parameters: w' = w + u * (mean_h w_final[h] - w) with one u uniform in
    [0, 1] shared by the weight matrix and the bias."""
    u = rng.uniform(0.0, 1.0)
    mean_w = final_weights.mean(axis=0)
    mean_b = final_biases.mean(axis=0)
    return replace(
        proj,
        weights=proj.weights + u * (mean_w - proj.weights),
        bias=proj.bias + u * (mean_b - proj.bias),
    )


def trace_covers(trace: LearningTrace, q: ModulatoryProjection) -> bool:
    """Does the trace record everything the replay of q needs?"""
    return (
        q.column in trace.activations
        and q.target_pre in trace.activations
        and q.target_post in trace.activations
        and (q.target_pre, q.target_post) in trace.final_weights
        and (q.target_pre, q.target_post) in trace.innate_weights
    )


def _z_prime(col: int, pre: np.ndarray) -> np.ndarray:
    kind = genome.COLUMN_ACTIVATIONS[col]
    if kind == "tanh":
        th = np.tanh(pre)
        return 1.0 - th * th
    if kind == "identity":
        return np.ones_like(pre)
    d = np.ones_like(pre)
    sd_pre = pre[..., 2:]
    inside = (sd_pre > network.SD_CLAMP_LO) & (sd_pre < network.SD_CLAMP_HI)
    d[..., 2:] = np.exp(np.clip(sd_pre, network.SD_CLAMP_LO, network.SD_CLAMP_HI)) * inside
    return d


@dataclass
class _ReplaySlice:
    """Parameter-independent replay inputs restricted to one instance subset."""

    a_m: np.ndarray  # (T, n, size_m)
    a_i: np.ndarray  # (T, n, size_i)
    g_in: np.ndarray  # (T, n, size_i + size_j)
    tgt_out: np.ndarray  # (T, n, size_j): z_j of the learned-weight response
    s: np.ndarray  # (n,)
    innate: np.ndarray  # (size_j, size_i)
    post_col: int
    tau: float
    tau_outside: bool


class ReplayProblem:
    """Precomputed pieces of the replay loss for one candidate's target."""

    def __init__(self, q: ModulatoryProjection, trace: LearningTrace,
                 tau: float = 1e-5, tau_outside: bool = False):
        i, j = q.target_pre, q.target_post
        self.a_m = trace.activations[q.column].astype(np.float64)
        self.a_i = trace.activations[i].astype(np.float64)
        a_j = trace.activations[j].astype(np.float64)
        self.g_in = np.concatenate([self.a_i, a_j], axis=2)
        self.innate = trace.innate_weights[(i, j)].copy()
        tgt_pre = np.einsum("hoi,thi->tho", trace.final_weights[(i, j)], self.a_i)
        self.tgt_out = column_output(j, tgt_pre)
        self.s = instance_scale(trace.r_last5)
        self.post_col = j
        self.tau = tau
        self.tau_outside = tau_outside
        self.n_instances = trace.n_instances

    def subset(self, idx: np.ndarray) -> _ReplaySlice:
        return _ReplaySlice(
            a_m=self.a_m[:, idx],
            a_i=self.a_i[:, idx],
            g_in=self.g_in[:, idx],
            tgt_out=self.tgt_out[:, idx],
            s=self.s[idx],
            innate=self.innate,
            post_col=self.post_col,
            tau=self.tau,
            tau_outside=self.tau_outside,
        )


def replay_loss(sl: _ReplaySlice, params: dict[str, np.ndarray], want_grads: bool):
    """Loss (and optionally exact gradients w.r.t. the MLP parameters) of the
    open-loop replay over the slice's instances."""
    fm_w1, fm_w2 = params["fm_w1"], params["fm_w2"]
    fg_w1, fg_w2 = params["fg_w1"], params["fg_w2"]
    T, n = sl.a_m.shape[:2]
    out_sz, in_sz = sl.innate.shape
    K = out_sz * in_sz

    hid = np.tanh(sl.a_m @ fm_w1.T)  # (T, n, 2N)
    raw = hid @ fm_w2.T  # (T, n, 2K)
    w_hat = raw[..., :K].reshape(T, n, out_sz, in_sz)
    beta_raw = raw[..., K:]
    beta = squash_unit(beta_raw).reshape(T, n, out_sz, in_sz)
    gh = np.tanh(sl.g_in @ fg_w1.T)  # (T, n, N)
    eta_raw = gh @ fg_w2.T  # (T, n, 1)
    eta = squash_unit(eta_raw)
    c = eta[..., None] * beta  # (T, n, out, in)

    w_tilde = np.empty((T, n, out_sz, in_sz))
    w_before = np.empty_like(w_tilde)  # replay weights entering step t
    w = np.broadcast_to(sl.innate, (n, out_sz, in_sz)).copy()
    for t in range(T):
        w_before[t] = w
        w = w + c[t] * (w_hat[t] - w)
        w_tilde[t] = w

    pred_pre = np.einsum("tnoi,tni->tno", w_tilde, sl.a_i)
    pred = column_output(sl.post_col, pred_pre)
    err = pred - sl.tgt_out
    m = np.sqrt((err * err).sum(axis=2))  # (T, n)
    eta_flat = eta[..., 0]  # (T, n)
    if sl.tau_outside:
        loss = float((sl.s * m.sum(axis=0)).sum() + sl.tau * eta_flat.sum())
    else:
        loss = float((sl.s * (m.sum(axis=0) + sl.tau * eta_flat.sum(axis=0))).sum())
    if not want_grads:
        return loss, None

    inv_m = np.where(m > 0.0, 1.0 / np.where(m > 0.0, m, 1.0), 0.0)
    d_pred = (sl.s[None, :] * inv_m)[..., None] * err  # (T, n, out)
    d_pred_pre = d_pred * _z_prime(sl.post_col, pred_pre)
    direct = np.einsum("tno,tni->tnoi", d_pred_pre, sl.a_i)

    d_w_hat = np.empty_like(c)
    d_c = np.empty_like(c)
    G = np.zeros((n, out_sz, in_sz))
    c_next = None
    for t in range(T - 1, -1, -1):
        if c_next is None:
            G = direct[t].copy()
        else:
            G = direct[t] + G * (1.0 - c_next)
        c_next = c[t]
        d_c[t] = G * (w_hat[t] - w_before[t])
        d_w_hat[t] = G * c[t]

    d_eta = (d_c * beta).sum(axis=(2, 3))  # (T, n)
    if sl.tau_outside:
        d_eta = d_eta + sl.tau
    else:
        d_eta = d_eta + sl.tau * sl.s[None, :]
    mask_eta = (eta_raw > -0.5) & (eta_raw < 0.5)
    d_eta_raw = d_eta[..., None] * mask_eta  # (T, n, 1)

    d_beta = d_c * eta[..., None]
    mask_beta = (beta_raw > -0.5) & (beta_raw < 0.5)
    d_beta_raw = d_beta.reshape(T, n, K) * mask_beta
    d_raw = np.concatenate([d_w_hat.reshape(T, n, K), d_beta_raw], axis=2)

    d_fm_w2 = np.einsum("tnk,tnm->km", d_raw, hid)
    d_hid = (d_raw @ fm_w2) * (1.0 - hid * hid)
    d_fm_w1 = np.einsum("tnm,tns->ms", d_hid, sl.a_m)
    d_fg_w2 = np.einsum("tnk,tnm->km", d_eta_raw, gh)
    d_gh = (d_eta_raw @ fg_w2) * (1.0 - gh * gh)
    d_fg_w1 = np.einsum("tnm,tns->ms", d_gh, sl.g_in)

    grads = {"fm_w1": d_fm_w1, "fm_w2": d_fm_w2, "fg_w1": d_fg_w1, "fg_w2": d_fg_w2}
    return loss, grads


def guided_loss(q: ModulatoryProjection, trace: LearningTrace,
                tau: float = 1e-5, tau_outside: bool = False,
                instances: np.ndarray | None = None) -> float:
    """Replay loss of candidate q over the trace (all instances by default)."""
    problem = ReplayProblem(q, trace, tau=tau, tau_outside=tau_outside)
    if instances is None:
        instances = np.arange(problem.n_instances)
    params = {name: getattr(q, name) for name in PARAM_NAMES}
    return replay_loss(problem.subset(instances), params, want_grads=False)[0]


def baseline_loss(problem: ReplayProblem, idx: np.ndarray) -> float:
    """Loss of the do-nothing candidate (eta = 0): replay weights never leave
    the innate values and the rate penalty vanishes."""
    sl = problem.subset(idx)
    pred_pre = np.einsum("oi,tni->tno", sl.innate, sl.a_i)
    err = column_output(sl.post_col, pred_pre) - sl.tgt_out
    m = np.sqrt((err * err).sum(axis=2))
    return float((sl.s * m.sum(axis=0)).sum())


def guided_modulatory(
    q: ModulatoryProjection,
    trace: LearningTrace,
    settings: GuidedSettings,
    rng: np.random.Generator,
) -> tuple[ModulatoryProjection, GuidedLossReport]:
    """Fit q's MLPs to the parent's observed learning by signSGD on the
    replay loss. Returns the parameters that achieved the best validation
    loss; a non-finite loss aborts and returns q unchanged."""
    problem = ReplayProblem(q, trace, tau=settings.tau, tau_outside=settings.tau_outside)
    H = problem.n_instances
    perm = rng.permutation(H)
    n_train = min(settings.n_train, H)
    train_idx = np.sort(perm[:n_train])
    val_idx = np.sort(perm[n_train:])
    train = problem.subset(train_idx)
    val = problem.subset(val_idx) if val_idx.size else None

    params = {name: getattr(q, name).copy() for name in PARAM_NAMES}
    best = {name: arr.copy() for name, arr in params.items()}
    best_val = np.inf
    train_losses: list[float] = []
    val_losses: list[float] = []
    delta = settings.initial_step
    prev_train = None
    since_improve = 0
    stalled = False

    for _ in range(settings.max_epochs):
        train_loss, grads = replay_loss(train, params, want_grads=True)
        val_loss = replay_loss(val, params, want_grads=False)[0] if val is not None else train_loss
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            report = GuidedLossReport(train_losses, val_losses, len(train_losses),
                                      stalled=False, accepted=False)
            return q, report
        train_losses.append(train_loss)
        val_losses.append(val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best = {name: arr.copy() for name, arr in params.items()}
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= settings.stall_patience:
                stalled = True
                break

        if prev_train is not None:
            delta = delta * 1.1 if train_loss < prev_train else delta * 0.5
        prev_train = train_loss
        for name in PARAM_NAMES:
            params[name] = params[name] - delta * np.sign(grads[name])

    report = GuidedLossReport(train_losses, val_losses, len(train_losses), stalled,
                              accepted=True)
    return replace(q, **best), report
