"""Finite-horizon, time-variant tabular MDPs and exact policy evaluation.

Times are 0-based throughout the package: an episode visits times
``0, 1, ..., H-1`` and ``transitions[t]`` moves the chain from time ``t`` to
``t + 1``. Action sets may differ per state; arrays are padded to the largest
action count and ``action_mask`` marks the real actions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-9


class ShapeError(ValueError):
    """Array dimensions disagree with the MDP they are used with."""


def _check_distribution(p: np.ndarray, axis: int, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p < -PROB_TOL):
        raise ValueError(f"{what} has negative entries")
    p = np.clip(p, 0.0, None)
    total = p.sum(axis=axis, keepdims=True)
    if np.any(np.abs(total - 1.0) > PROB_TOL):
        raise ValueError(f"{what} does not sum to 1 (max deviation {np.max(np.abs(total - 1.0)):.3g})")
    return p / total


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Episodic MDP ``(rho, P, H, r)``.

    ``transitions`` has shape ``(H-1, S, A, S)``; entries for padded actions
    (``a >= actions_per_state[s]``) are ignored. ``rewards`` is optional and
    has shape ``(H, S, A)`` with entries in ``[0, 1]``.
    """

    initial_dist: np.ndarray
    transitions: np.ndarray
    actions_per_state: np.ndarray
    rewards: np.ndarray | None = None
    name: str = "mdp"
    action_mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rho = _check_distribution(self.initial_dist, 0, "initial_dist")
        P = np.asarray(self.transitions, dtype=float)
        if P.ndim != 4 or P.shape[1] != P.shape[3] or P.shape[1] != rho.shape[0]:
            raise ShapeError(f"transitions must have shape (H-1, S, A, S), got {P.shape}")
        S, A = P.shape[1], P.shape[2]
        n_act = np.asarray(self.actions_per_state, dtype=int)
        if n_act.shape != (S,) or np.any(n_act < 1) or np.any(n_act > A):
            raise ShapeError("actions_per_state must hold one count in [1, A] per state")
        mask = np.arange(A)[None, :] < n_act[:, None]
        # padded actions copy action 0 so vectorised code never sees garbage rows
        P = np.where(mask[None, :, :, None], P, P[:, :, :1, :])
        if P.shape[0]:
            P = _check_distribution(P, 3, "transitions")
        object.__setattr__(self, "initial_dist", rho)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "actions_per_state", n_act)
        object.__setattr__(self, "action_mask", mask)
        if self.rewards is not None:
            object.__setattr__(self, "rewards", self.check_rewards(self.rewards))
        for arr in (rho, P, n_act, mask):
            arr.setflags(write=False)

    @property
    def num_states(self) -> int:
        return self.initial_dist.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[2]

    @property
    def horizon(self) -> int:
        return self.transitions.shape[0] + 1

    def check_rewards(self, rewards) -> np.ndarray:
        r = np.asarray(rewards, dtype=float)
        if r.shape != (self.horizon, self.num_states, self.num_actions):
            raise ShapeError(
                f"rewards must have shape {(self.horizon, self.num_states, self.num_actions)}, got {r.shape}"
            )
        if np.any(r < 0.0) or np.any(r > 1.0):
            raise ValueError("rewards must lie in [0, 1]")
        return r

    def truncate(self, horizon: int) -> "TabularMDP":
        """The same MDP cut after ``horizon`` steps."""
        if not 1 <= horizon <= self.horizon:
            raise ValueError(f"cannot truncate horizon {self.horizon} to {horizon}")
        rewards = None if self.rewards is None else self.rewards[:horizon]
        return TabularMDP(self.initial_dist, self.transitions[: horizon - 1], self.actions_per_state,
                          rewards, name=f"{self.name}[:{horizon}]")

    def with_rewards(self, rewards) -> "TabularMDP":
        return TabularMDP(self.initial_dist, self.transitions, self.actions_per_state, rewards, name=self.name)


# ---------------------------------------------------------------------------
# Policies


class Policy:
    """Time-variant action rule. Subclasses define ``probs`` or override the occupancy."""

    horizon: int

    def action_probs(self, mdp: TabularMDP) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class DeterministicPolicy(Policy):
    """``actions[t, s]`` is the action played at state ``s`` at time ``t``."""

    actions: np.ndarray

    def __post_init__(self):
        acts = np.asarray(self.actions, dtype=int)
        if acts.ndim != 2:
            raise ShapeError("deterministic policy needs an (H, S) action table")
        object.__setattr__(self, "actions", acts)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def action_probs(self, mdp: TabularMDP) -> np.ndarray:
        _check_policy_shape(self, mdp)
        if np.any(self.actions < 0) or np.any(self.actions >= mdp.actions_per_state[None, :]):
            raise ValueError("deterministic policy uses an action outside the state's action set")
        probs = np.zeros((mdp.horizon, mdp.num_states, mdp.num_actions))
        t, s = np.indices(self.actions.shape)
        probs[t, s, self.actions] = 1.0
        return probs


@dataclass(frozen=True, eq=False)
class StochasticPolicy(Policy):
    """``probs[t, s, a] = pi_t(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 3:
            raise ShapeError("stochastic policy needs an (H, S, A) table")
        object.__setattr__(self, "probs", _check_distribution(p, 2, "policy rows"))

    @property
    def horizon(self) -> int:
        return self.probs.shape[0]

    def action_probs(self, mdp: TabularMDP) -> np.ndarray:
        _check_policy_shape(self, mdp)
        if np.any(self.probs[:, ~mdp.action_mask] > PROB_TOL):
            raise ValueError("stochastic policy puts mass on an invalid action")
        return self.probs


@dataclass(frozen=True, eq=False)
class FlagAwarePolicy(Policy):
    """Policy that also sees a history bit ``b``.

    ``b`` switches on the first time the episode is at a state flagged in
    ``unseen[t, s]`` and never switches off. ``probs[t, s, b, a]``.
    """

    probs: np.ndarray
    unseen: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        u = np.asarray(self.unseen, dtype=bool)
        if p.ndim != 4 or p.shape[2] != 2 or u.shape != p.shape[:2]:
            raise ShapeError("flag-aware policy needs (H, S, 2, A) probs and (H, S) unseen mask")
        object.__setattr__(self, "probs", _check_distribution(p, 3, "policy rows"))
        object.__setattr__(self, "unseen", u)

    @property
    def horizon(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True, eq=False)
class MixturePolicy(Policy):
    """Play ``left`` for the whole episode with probability ``alpha``, else ``right``."""

    alpha: float
    left: Policy
    right: Policy

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"mixture weight {self.alpha} outside [0, 1]")
        if self.left.horizon != self.right.horizon:
            raise ShapeError("mixture components have different horizons")

    @property
    def horizon(self) -> int:
        return self.left.horizon


def _check_policy_shape(policy: Policy, mdp: TabularMDP) -> None:
    table = policy.actions if isinstance(policy, DeterministicPolicy) else policy.probs
    if table.shape[0] != mdp.horizon or table.shape[1] != mdp.num_states:
        raise ShapeError(f"policy table {table.shape} does not fit MDP (H={mdp.horizon}, S={mdp.num_states})")
    if not isinstance(policy, DeterministicPolicy) and table.shape[-1] != mdp.num_actions:
        raise ShapeError(f"policy has {table.shape[-1]} actions, MDP has {mdp.num_actions}")


# ---------------------------------------------------------------------------
# Occupancy measures and values


def flag_occupancy(mdp: TabularMDP, policy: FlagAwarePolicy) -> np.ndarray:
    """Joint law ``q[t, s, b, a]`` of state, flag and action for a flag-aware policy."""
    _check_policy_shape(policy, mdp)
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    pi, unseen = policy.probs, policy.unseen
    q = np.zeros((H, S, 2, A))
    m = np.zeros((S, 2))
    m[:, 1] = np.where(unseen[0], mdp.initial_dist, 0.0)
    m[:, 0] = np.where(unseen[0], 0.0, mdp.initial_dist)
    for t in range(H):
        q[t] = m[:, :, None] * pi[t]
        if t == H - 1:
            break
        nxt = np.einsum("sba,sax->xb", q[t], mdp.transitions[t])
        u = unseen[t + 1]
        m = np.empty((S, 2))
        m[:, 0] = np.where(u, 0.0, nxt[:, 0])
        m[:, 1] = nxt[:, 1] + np.where(u, nxt[:, 0], 0.0)
    return q


def occupancy_measures(mdp: TabularMDP, policy: Policy) -> np.ndarray:
    """State-action occupancy ``q[t, s, a] = Pr_pi(s_t = s, a_t = a)``.

    Forward recursion ``q_{t+1}(s', .) = pi_{t+1}(. | s') sum_{s,a} q_t(s, a) P_t(s' | s, a)``.
    Flag-aware policies are evaluated on the flag-lifted chain and the flag
    is summed out; mixtures combine their components linearly.
    """
    if isinstance(policy, MixturePolicy):
        return (policy.alpha * occupancy_measures(mdp, policy.left)
                + (1.0 - policy.alpha) * occupancy_measures(mdp, policy.right))
    if isinstance(policy, FlagAwarePolicy):
        return flag_occupancy(mdp, policy).sum(axis=2)
    pi = policy.action_probs(mdp)
    q = np.empty((mdp.horizon, mdp.num_states, mdp.num_actions))
    marginal = mdp.initial_dist
    for t in range(mdp.horizon):
        q[t] = marginal[:, None] * pi[t]
        if t < mdp.horizon - 1:
            marginal = np.einsum("sa,sax->x", q[t], mdp.transitions[t])
    return q


def state_marginals(mdp: TabularMDP, policy: Policy) -> np.ndarray:
    return occupancy_measures(mdp, policy).sum(axis=2)


def policy_value(mdp: TabularMDP, policy: Policy, rewards=None) -> float:
    """Expected cumulative reward ``J_r(pi)``; defaults to the MDP's own rewards."""
    if rewards is None:
        if mdp.rewards is None:
            raise ValueError("no reward tensor given and the MDP carries none")
        rewards = mdp.rewards
    r = mdp.check_rewards(rewards)
    return float(np.sum(occupancy_measures(mdp, policy) * r))


# ---------------------------------------------------------------------------
# Sampling


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray

    def __len__(self):
        return len(self.states)


def _sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of ``probs`` (rows sum to one)."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])[..., None]
    idx = (u >= cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def sample_trajectories(mdp: TabularMDP, policy: Policy, n: int, rng: np.random.Generator):
    """``n`` independent rollouts; returns ``(states, actions)`` arrays of shape ``(n, H)``."""
    H = mdp.horizon
    states = np.zeros((n, H), dtype=int)
    actions = np.zeros((n, H), dtype=int)
    if n == 0:
        return states, actions
    if isinstance(policy, MixturePolicy):
        pick_left = rng.random(n) < policy.alpha
        for flag, comp in ((pick_left, policy.left), (~pick_left, policy.right)):
            k = int(flag.sum())
            if k:
                states[flag], actions[flag] = sample_trajectories(mdp, comp, k, rng)
        return states, actions
    flagged = isinstance(policy, FlagAwarePolicy)
    if flagged:
        _check_policy_shape(policy, mdp)
        pi = policy.probs
    else:
        pi = policy.action_probs(mdp)
    s = _sample_categorical(np.broadcast_to(mdp.initial_dist, (n, mdp.num_states)), rng)
    b = policy.unseen[0, s].astype(int) if flagged else None
    for t in range(H):
        states[:, t] = s
        rows = pi[t, s, b] if flagged else pi[t, s]
        a = _sample_categorical(rows, rng)
        actions[:, t] = a
        if t < H - 1:
            s = _sample_categorical(mdp.transitions[t, s, a], rng)
            if flagged:
                b = b | policy.unseen[t + 1, s]
    return states, actions


def sample_trajectory(mdp: TabularMDP, policy: Policy, rng: np.random.Generator) -> Trajectory:
    """A single rollout of length ``H``."""
    states, actions = sample_trajectories(mdp, policy, 1, rng)
    return Trajectory(states[0], actions[0])


# ---------------------------------------------------------------------------
# Distances and kernels


def tv_distance(p, q) -> float:
    """Total variation ``(1/2) sum_i |p_i - q_i|``."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise ShapeError(f"length mismatch: {p.shape} vs {q.shape}")
    for v, name in ((p, "p"), (q, "q")):
        if abs(v.sum() - 1.0) > 1e-8:
            raise ValueError(f"{name} does not sum to 1")
    return 0.5 * float(np.abs(p - q).sum())


def apply_kernel(p, kernel) -> np.ndarray:
    """Push a distribution through a row-stochastic matrix: ``p @ K``."""
    p = np.asarray(p, dtype=float)
    K = np.asarray(kernel, dtype=float)
    if K.ndim != 2 or K.shape[0] != p.shape[0]:
        raise ShapeError(f"kernel {K.shape} does not act on a vector of length {p.shape[0]}")
    if np.any(np.abs(K.sum(axis=1) - 1.0) > PROB_TOL):
        raise ValueError("kernel rows must sum to 1")
    return p @ K


# ---------------------------------------------------------------------------
# Reachability through a restricted state set


START = "start"
FINISH = "finish"


def _step(mdp: TabularMDP, t: int, mass: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Push per-state mass at time ``t`` one step using ``actions[t]`` (deterministic)."""
    live = np.nonzero(mass)[0]
    if live.size and np.any(actions[t, live] < 0):
        bad = live[actions[t, live] < 0][0]
        raise KeyError(f"no action available for state {bad} at time {t}")
    rows = mdp.transitions[t, np.arange(mdp.num_states), np.maximum(actions[t], 0)]
    return mass @ rows


def restricted_forward(mdp: TabularMDP, actions: np.ndarray, allowed: np.ndarray, source) -> np.ndarray:
    """Mass reaching every ``(t', s')`` from ``source`` with all intermediate states in ``allowed``.

    ``source`` is ``START`` (begin from ``rho``) or a ``(t, s)`` pair. Row
    ``t'`` of the result is the probability of arriving at ``s'`` at time
    ``t'`` while every state strictly between the endpoints was allowed. Rows
    at or before the source time are zero, except the start row which holds
    ``rho`` itself. ``actions[t, s] = -1`` marks an unknown action; hitting
    one with positive mass raises ``KeyError``.
    """
    H = mdp.horizon
    reach = np.zeros((H, mdp.num_states))
    if source == START:
        reach[0] = mdp.initial_dist
        t0 = 0
        mass = mdp.initial_dist * allowed[0]
    else:
        t0, s0 = source
        if actions[t0, s0] < 0:
            raise KeyError(f"no action available for the source state {s0} at time {t0}")
        mass = np.zeros(mdp.num_states)
        mass[s0] = 1.0
    for t in range(t0, H - 1):
        reach[t + 1] = _step(mdp, t, mass, actions)
        mass = reach[t + 1] * allowed[t + 1]
    return reach


def restricted_reach_prob(mdp: TabularMDP, actions, allowed, source=START, target=FINISH) -> float:
    """Probability of going from ``source`` to ``target`` through allowed states only.

    ``source``: ``START`` or ``(t1, s1)``. ``target``: ``FINISH`` (any state at
    the last time) or ``(t2, s2)``. From ``START`` the first state itself must
    be allowed unless it is the target.
    """
    actions = np.asarray(actions, dtype=int)
    allowed = np.asarray(allowed, dtype=bool)
    reach = restricted_forward(mdp, actions, allowed, source)
    if target == FINISH:
        if source == START and mdp.horizon == 1:
            return 1.0
        return float(reach[-1].sum())
    t2, s2 = target
    if source != START and t2 <= source[0]:
        raise ValueError("target time must come after the source time")
    return float(reach[t2, s2])
