"""Rotated-frame 2D target-approach task.

A task instance fixes a random rotation of the observation coordinate frame.
Within an instance, each trial places the agent at the origin and a target at
unit distance in a random direction; the agent gets T_TRIAL steps to approach
it. Observations are given in the rotated frame while actions act in the
fixed world frame, so good performance requires learning the instance's
rotation from the interplay of actions and observation changes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

T_TRIAL = 10

OBS_DIM = 6  # (current_rel, prev_rel, prev_action)


class PolicyDivergence(Exception):
    """Raised when a policy emits non-finite action components."""


def rotation_matrix(angle: float) -> np.ndarray:
    """Counter-clockwise rotation by ``angle`` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class TaskInstance:
    """One task: a fixed rotation of the observation frame."""

    rotation_angle: float

    @property
    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.rotation_angle)


@dataclass
class TrialState:
    agent_pos: np.ndarray  # world frame
    target_pos: np.ndarray  # world frame
    t: int = 0
    t_trial: int = T_TRIAL


@dataclass(frozen=True)
class Observation:
    """Network input: rotated relative target position, previous rotated
    relative position, and the previous action (world frame). The reward is
    deliberately not part of the observation."""

    current_rel: np.ndarray
    prev_rel: np.ndarray
    prev_action: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.current_rel, self.prev_rel, self.prev_action])


def create_instance(rng: np.random.Generator) -> TaskInstance:
    """Draw an instance with rotation angle uniform on [0, 2*pi)."""
    return TaskInstance(rotation_angle=float(rng.uniform(0.0, 2.0 * np.pi)))


def begin_trial(instance: TaskInstance, rng: np.random.Generator) -> TrialState:
    """Agent at the origin, target at unit distance in a uniform direction."""
    theta = rng.uniform(0.0, 2.0 * np.pi)
    target = np.array([np.cos(theta), np.sin(theta)])
    return TrialState(agent_pos=np.zeros(2), target_pos=target)


def observe(
    trial: TrialState,
    instance: TaskInstance,
    prev_rel: np.ndarray,
    prev_action: np.ndarray,
) -> Observation:
    """Rotated relative target position plus pass-through history fields."""
    assert trial.t <= trial.t_trial
    current_rel = instance.rotation @ (trial.target_pos - trial.agent_pos)
    return Observation(current_rel=current_rel, prev_rel=prev_rel, prev_action=prev_action)


def clip_to_unit_circle(action: np.ndarray) -> np.ndarray:
    """Rescale an action into the unit circle (identity if already inside)."""
    norm = float(np.linalg.norm(action))
    if norm <= 1.0:
        return action
    return action / norm


def apply_action(trial: TrialState, raw_action: np.ndarray) -> TrialState:
    """Move by clip(raw_action) / t_trial in the world frame.

    Raises PolicyDivergence on non-finite components; the caller is expected
    to abort the instance evaluation and score remaining trials at -1.
    """
    assert trial.t < trial.t_trial
    if not np.all(np.isfinite(raw_action)):
        raise PolicyDivergence(f"non-finite action {raw_action}")
    move = clip_to_unit_circle(raw_action) / trial.t_trial
    trial.agent_pos = trial.agent_pos + move
    trial.t += 1
    return trial


def trial_reward(trial: TrialState) -> float:
    """Terminal reward 1 - d. Zero reward is emitted at all earlier steps."""
    assert trial.t == trial.t_trial
    return 1.0 - float(np.linalg.norm(trial.target_pos - trial.agent_pos))


def optimal_controller(instance: TaskInstance, obs: Observation) -> np.ndarray:
    """Reference controller that inverts the frame rotation.

    Outputs R^-1 * current_rel * t_trial, which after the environment's
    unit-circle rescale moves straight at the target at maximum speed and
    lands exactly on it. Used as the task-mechanics oracle.
    """
    world_rel = instance.rotation.T @ obs.current_rel
    return world_rel * T_TRIAL


def run_trial(
    instance: TaskInstance,
    rng: np.random.Generator,
    controller,
) -> float:
    """Run one trial with ``controller(instance, obs) -> raw_action``."""
    trial = begin_trial(instance, rng)
    prev_rel = np.zeros(2)
    prev_action = np.zeros(2)
    for _ in range(trial.t_trial):
        obs = observe(trial, instance, prev_rel, prev_action)
        raw = controller(instance, obs)
        apply_action(trial, raw)
        prev_rel = obs.current_rel
        prev_action = clip_to_unit_circle(raw)
    return trial_reward(trial)
