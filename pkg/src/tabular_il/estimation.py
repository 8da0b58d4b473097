"""Baseline estimators: empirical occupancy, Behavior Cloning, value estimates."""

from __future__ import annotations

import numpy as np

from .data import Dataset, VisitedIndex
from .mdp import DeterministicPolicy, Policy, ShapeError, TabularMDP, occupancy_measures, policy_value


def empirical_occupancy(dataset: Dataset, num_states: int, num_actions: int) -> np.ndarray:
    """``f[t, s, a]``: fraction of trajectories at ``(s, a)`` at time ``t``."""
    n = len(dataset)
    if n == 0:
        raise ValueError("empirical occupancy of an empty dataset")
    H = dataset.horizon
    f = np.zeros((H, num_states, num_actions))
    t = np.broadcast_to(np.arange(H), dataset.states.shape)
    np.add.at(f, (t, dataset.states, dataset.actions), 1.0)
    return f / n


def bc_policy(visited: VisitedIndex, mdp: TabularMDP, default_action: int = 0) -> DeterministicPolicy:
    """Copy the expert where it was observed, play ``default_action`` elsewhere."""
    if np.any(default_action >= mdp.actions_per_state) or default_action < 0:
        raise ValueError(f"default action {default_action} is not available in every state")
    actions = np.where(visited.visited, visited.pinned, default_action)
    return DeterministicPolicy(actions)


def expert_value_estimate(mdp: TabularMDP, learned_policy: Policy, rewards=None) -> float:
    """Value of the imitating policy, used as the estimate of the expert's value."""
    return policy_value(mdp, learned_policy, rewards)


def uniform_value_error(mdp: TabularMDP, expert: Policy, estimated_occupancies: np.ndarray) -> float:
    """``sum_t TV(f_t^expert, f_hat_t)``, the worst case over rewards in ``[0, 1]``."""
    exact = occupancy_measures(mdp, expert)
    est = np.asarray(estimated_occupancies, dtype=float)
    if est.shape != exact.shape:
        raise ShapeError(f"estimate shape {est.shape} != occupancy shape {exact.shape}")
    return 0.5 * float(np.abs(exact - est).sum())


def worst_case_suboptimality(mdp: TabularMDP, expert: Policy, learner: Policy) -> float:
    """``sup_r J_r(expert) - J_r(learner)`` over rewards in ``[0, 1]``."""
    return uniform_value_error(mdp, expert, occupancy_measures(mdp, learner))
