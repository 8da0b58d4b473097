"""Hard instances, expert priors and closed-form quantities.

State numbering is zero-based: the four-state chain uses states 0..3 for the
states usually called 1..4, and the three-state instance uses 0, 1, 2 for the
branching state, the rewarding state and the non-rewarding state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import VisitedIndex
from .mdp import DeterministicPolicy, TabularMDP, policy_value

RED, BLUE = 0, 1
FOUR_STATE_REWARDS = ("state3", "terminal", "expert")
THREE_STATE_REWARDS = ("per-step", "terminal")


@dataclass(frozen=True, eq=False)
class InstanceBundle:
    mdp: TabularMDP
    expert: DeterministicPolicy
    metadata: dict = field(default_factory=dict)

    @property
    def rewards(self) -> np.ndarray:
        return self.mdp.rewards


def four_state_weights(N: float, H: int) -> np.ndarray:
    """``w[t]``: probability of being at the branching state at time ``t`` (0-based)."""
    t = np.arange(H)
    return (1.0 - 1.0 / N) ** t / N


def optimal_policy(mdp: TabularMDP, rewards=None) -> tuple[DeterministicPolicy, np.ndarray]:
    """Backward induction; ties go to the lowest action index. Returns ``(policy, V)``."""
    r = mdp.rewards if rewards is None else mdp.check_rewards(rewards)
    if r is None:
        raise ValueError("no rewards to optimise")
    H, S = mdp.horizon, mdp.num_states
    V = np.zeros((H + 1, S))
    actions = np.zeros((H, S), dtype=int)
    for t in range(H - 1, -1, -1):
        Q = r[t].copy()
        if t < H - 1:
            Q += mdp.transitions[t] @ V[t + 1]
        Q = np.where(mdp.action_mask, Q, -np.inf)
        actions[t] = np.argmax(Q, axis=1)
        V[t] = Q[np.arange(S), actions[t]]
    return DeterministicPolicy(actions), V[:H]


def is_optimal(mdp: TabularMDP, policy, rewards=None, tol: float = 1e-10) -> bool:
    best, V = optimal_policy(mdp, rewards)
    return policy_value(mdp, policy, rewards) >= float(mdp.initial_dist @ V[0]) - tol


def four_state_mdp(N: float, H: int, U, reward: str = "state3") -> InstanceBundle:
    """Four-state chain with one branching decision per time step.

    ``U[t] = 1`` means the expert plays red (toward the rewarding absorbing
    state) at the branching state at time ``t``; ``U`` has length ``H-1``.
    ``reward`` selects reward on the red absorbing state at every step
    (``state3``), only at the last step (``terminal``), or on the expert's own
    action at the branching state (``expert``), which makes any ``U`` optimal.
    """
    if N < 1 or H < 2:
        raise ValueError("need N >= 1 and H >= 2")
    U = np.asarray(U, dtype=int)
    if U.shape != (H - 1,) or np.any((U != 0) & (U != 1)):
        raise ValueError(f"U must be a 0/1 vector of length H-1 = {H - 1}")
    if reward not in FOUR_STATE_REWARDS:
        raise ValueError(f"reward must be one of {FOUR_STATE_REWARDS}")
    P = np.zeros((H - 1, 4, 2, 4))
    P[:, 0, :, 0] = 1.0 - 1.0 / N
    P[:, 0, :, 1] = 1.0 / N
    P[:, 1, RED, 2] = 1.0
    P[:, 1, BLUE, 3] = 1.0
    P[:, 2, :, 2] = 1.0
    P[:, 3, :, 3] = 1.0
    r = np.zeros((H, 4, 2))
    if reward == "state3":
        r[:, 2, :] = 1.0
    elif reward == "terminal":
        r[H - 1, 2, :] = 1.0
    else:
        t = np.arange(H - 1)
        r[t, 1, np.where(U == 1, RED, BLUE)] = 1.0
    rho = np.array([1.0 - 1.0 / N, 1.0 / N, 0.0, 0.0])
    mdp = TabularMDP(rho, P, np.array([1, 2, 1, 1]), r, name=f"four-state[{reward}]")
    actions = np.zeros((H, 4), dtype=int)
    actions[: H - 1, 1] = np.where(U == 1, RED, BLUE)
    expert = DeterministicPolicy(actions)
    meta = {"name": "four-state", "N": N, "H": H, "U": U.tolist(), "reward": reward,
            "expert_optimal": is_optimal(mdp, expert)}
    return InstanceBundle(mdp, expert, meta)


def three_state_hard_mdp(N: float, H: int, reward: str = "per-step") -> TabularMDP:
    """Three-state lower-bound instance.

    State 0 branches: action 0 goes to state 1, action 1 to state 2. States 1
    and 2 have a single action that returns to state 0 with probability
    ``2/N`` and stays put otherwise. The episode starts in state 1, which is
    the rewarding state.
    """
    if N < 3 or H < 2:
        raise ValueError("need N >= 3 and H >= 2")
    if reward not in THREE_STATE_REWARDS:
        raise ValueError(f"reward must be one of {THREE_STATE_REWARDS}")
    p = 2.0 / N
    P = np.zeros((H - 1, 3, 2, 3))
    P[:, 0, 0, 1] = 1.0
    P[:, 0, 1, 2] = 1.0
    for s in (1, 2):
        P[:, s, :, 0] = p
        P[:, s, :, s] = 1.0 - p
    r = np.zeros((H, 3, 2))
    if reward == "per-step":
        r[:, 1, :] = 1.0
    else:
        r[H - 1, 1, :] = 1.0
    return TabularMDP(np.array([0.0, 1.0, 0.0]), P, np.array([2, 1, 1]), r, name=f"three-state-hard[{reward}]")


def three_state_terminal_mdp(N: float, H: int, rng: np.random.Generator) -> TabularMDP:
    """Three-state instance with only a terminal reward and mixing bulk states.

    The branching state 0 is as in :func:`three_state_hard_mdp`. From state 1
    or 2 the chain returns to state 0 with probability ``2/N`` and otherwise
    moves to state 1 with a probability drawn uniformly per ``(t, s)``. Reward
    1 sits on state 1 at the last step only, so the optimal branching action
    changes over time and the optimal expert visits both bulk states.
    """
    if N < 3 or H < 2:
        raise ValueError("need N >= 3 and H >= 2")
    p = 2.0 / N
    P = np.zeros((H - 1, 3, 2, 3))
    P[:, 0, 0, 1] = 1.0
    P[:, 0, 1, 2] = 1.0
    mix = rng.random((H - 1, 2))
    for i, s in enumerate((1, 2)):
        P[:, s, :, 0] = p
        P[:, s, :, 1] = ((1.0 - p) * mix[:, i])[:, None]
        P[:, s, :, 2] = ((1.0 - p) * (1.0 - mix[:, i]))[:, None]
    r = np.zeros((H, 3, 2))
    r[H - 1, 1, :] = 1.0
    return TabularMDP(np.array([0.0, 0.5, 0.5]), P, np.array([2, 1, 1]), r, name="three-state-terminal")


def three_state_branch_marginal(N: float, H: int) -> np.ndarray:
    """Closed form of ``Pr(s_t = branching state)``, the same for every policy."""
    t = np.arange(H)
    return (1.0 / (N / 2 + 1)) * (1.0 - (-N / 2.0) ** (-t.astype(float)))


def two_state_mdp(N: float, H: int) -> TabularMDP:
    """Two-state analogue: the rewarding state 1 drifts to state 0 with probability ``2/N``.

    In state 0, action 0 returns to state 1 and action 1 stays in state 0.
    """
    if N < 3 or H < 2:
        raise ValueError("need N >= 3 and H >= 2")
    p = 2.0 / N
    P = np.zeros((H - 1, 2, 2, 2))
    P[:, 0, 0, 1] = 1.0
    P[:, 0, 1, 0] = 1.0
    P[:, 1, :, 0] = p
    P[:, 1, :, 1] = 1.0 - p
    r = np.zeros((H, 2, 2))
    r[:, 1, :] = 1.0
    return TabularMDP(np.array([0.0, 1.0]), P, np.array([2, 1]), r, name="two-state")


def random_mdp(num_states: int, num_actions: int, H: int, rng: np.random.Generator,
               concentration: float = 1.0) -> TabularMDP:
    """Dirichlet transitions and initial law, uniform rewards, every state with all actions."""
    P = rng.dirichlet(np.full(num_states, concentration), size=(H - 1, num_states, num_actions))
    rho = rng.dirichlet(np.full(num_states, concentration))
    r = rng.random((H, num_states, num_actions))
    return TabularMDP(rho, P, np.full(num_states, num_actions), r, name="random")


def sample_expert_prior(mdp: TabularMDP, rng: np.random.Generator,
                        known: VisitedIndex | None = None) -> DeterministicPolicy:
    """Uniform action at every ``(t, s)``; states in ``known`` keep their pinned action."""
    H, S = mdp.horizon, mdp.num_states
    actions = np.floor(rng.random((H, S)) * mdp.actions_per_state[None, :]).astype(int)
    if known is not None:
        actions = np.where(known.visited, known.pinned, actions)
    return DeterministicPolicy(actions)


def prior_variance_vH(N: float, H: int) -> float:
    """Variance of ``v_H = sum_t w_t U_t`` with i.i.d. fair bits ``U_t``."""
    if N < 1 or H < 2:
        raise ValueError("need N >= 1 and H >= 2")
    w = four_state_weights(N, H - 1)
    return float(np.sum(w**2) / 4.0)


# ---------------------------------------------------------------------------
# named instances used by the harness and CLI

INSTANCE_NAMES = ("four-state", "three-state-hard", "three-state-terminal", "two-state", "random")


def make_instance(name: str, N: int, H: int, rng: np.random.Generator, expert: str = "prior",
                  reward: str | None = None, U=None, num_states: int = 3, num_actions: int = 2) -> InstanceBundle:
    """Build a named instance together with its expert.

    ``expert`` is ``prior`` (uniform random deterministic policy), ``optimal``
    (backward induction on the instance reward) or ``all-ones`` (four-state
    only: always red). For the four-state chain ``U`` overrides the expert bits.
    """
    if name == "four-state":
        if U is None:
            if expert == "prior":
                U = (rng.random(H - 1) < 0.5).astype(int)
            elif expert in ("all-ones", "optimal"):
                U = np.ones(H - 1, dtype=int)
            else:
                raise ValueError(f"unknown expert {expert!r}")
        return four_state_mdp(N, H, U, reward or "state3")
    if name == "three-state-hard":
        mdp = three_state_hard_mdp(N, H, reward or "per-step")
    elif name == "three-state-terminal":
        mdp = three_state_terminal_mdp(N, H, rng)
    elif name == "two-state":
        mdp = two_state_mdp(N, H)
    elif name == "random":
        mdp = random_mdp(num_states, num_actions, H, rng)
    else:
        raise ValueError(f"unknown instance {name!r}; choose from {INSTANCE_NAMES}")
    if expert == "prior":
        pol = sample_expert_prior(mdp, rng)
    elif expert == "optimal":
        pol = optimal_policy(mdp)[0]
    else:
        raise ValueError(f"unknown expert {expert!r} for instance {name}")
    meta = {"name": name, "N": N, "H": H, "expert": expert, "expert_optimal": is_optimal(mdp, pol)}
    return InstanceBundle(mdp, pol, meta)
